//! Outage calibration of the slow-fading model.

mod common;

use rand::Rng;
use rand_distr::StandardNormal;
use uavnet::channel::{decode_check, link_rng, rice_gain_quantile, rice_power_ccdf, sample_fading};

/// Modified Bessel function `I₀` by its power series.
fn bessel_i0(z: f64) -> f64 {
    let q = 0.25 * z * z;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..500 {
        term *= q / (k as f64 * k as f64);
        sum += term;
        if term < 1e-17 * sum {
            break;
        }
    }
    sum
}

/// Unit-mean Rician power density.
fn rice_pdf(x: f64, k: f64) -> f64 {
    (k + 1.0) * (-k - (k + 1.0) * x).exp() * bessel_i0(2.0 * (k * (k + 1.0) * x).sqrt())
}

fn ccdf_by_quadrature(x: f64, k: f64) -> f64 {
    let n = 20_000;
    let h = x / n as f64;
    let mut s = rice_pdf(0.0, k) + rice_pdf(x, k);
    for i in 1..n {
        s += rice_pdf(i as f64 * h, k) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    1.0 - s * h / 3.0
}

#[test]
fn ccdf_matches_density_integral() {
    for k in [0.0, 1.0, 3.0, 10.0] {
        for x in [0.05, 0.2, 0.5, 1.0, 2.0] {
            let want = ccdf_by_quadrature(x, k);
            let got = rice_power_ccdf(x, k);
            assert!((got - want).abs() < 1e-8, "κ={k} x={x}: {got} vs {want}");
        }
    }
}

#[test]
fn sampler_matches_ccdf() {
    let mut rng = common::rng(7);
    let n = 200_000;
    for k in [0.0f64, 4.0, 10.0] {
        let los = (k / (k + 1.0)).sqrt();
        let s = (0.5 / (k + 1.0)).sqrt();
        let ours: Vec<f64> = (0..n)
            .map(|_| {
                let a: f64 = rng.sample(StandardNormal);
                let b: f64 = rng.sample(StandardNormal);
                (los + s * a).powi(2) + (s * b).powi(2)
            })
            .collect();
        let theirs: Vec<f64> = (0..n).map(|_| sample_fading(k, &mut rng)).collect();
        for x in [0.1, 0.5, 1.0, 1.5] {
            let p = rice_power_ccdf(x, k);
            let sigma = (p * (1.0 - p) / n as f64).sqrt().max(1e-6);
            for sample in [&ours, &theirs] {
                let emp = sample.iter().filter(|&&h| h >= x).count() as f64 / n as f64;
                assert!((emp - p).abs() < 4.0 * sigma, "κ={k} x={x}: {emp} vs {p}");
            }
        }
    }
}

/// Single link planned at `h_eff = F⁻¹(ε)`: the packet decodes iff the
/// realised received power reaches the planned one.
#[test]
fn decode_rate_meets_outage_target() {
    let n = 10_000u64;
    for (k, eps) in [(10.0, 0.01), (10.0, 0.1), (3.0, 0.05), (0.0, 0.1)] {
        let h_eff = rice_gain_quantile(k, eps).unwrap();
        let planned = [1e-9 * h_eff];
        let ok = (0..n)
            .filter(|&pkt| {
                let h = sample_fading(k, &mut link_rng(11, 0, pkt));
                decode_check(&planned, &[1e-9 * h], 1e-10).unwrap()[0]
            })
            .count() as f64;
        let rate = ok / n as f64;
        let sigma = (eps * (1.0 - eps) / n as f64).sqrt();
        assert!(rate >= 1.0 - eps - 3.0 * sigma, "κ={k} ε={eps}: rate {rate}");
        assert!(rate <= 1.0 - eps + 3.0 * sigma, "κ={k} ε={eps}: rate {rate} is too conservative");
    }
}

#[test]
fn streams_are_reproducible_and_distinct() {
    let a: f64 = link_rng(1, 2, 3).gen();
    let b: f64 = link_rng(1, 2, 3).gen();
    let c: f64 = link_rng(1, 2, 4).gen();
    let d: f64 = link_rng(1, 3, 3).gen();
    assert_eq!(a, b);
    assert_ne!(a, c);
    assert_ne!(a, d);
}
