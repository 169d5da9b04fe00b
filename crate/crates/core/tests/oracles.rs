//! Analytic planners against brute-force searches written from scratch.

mod common;

use common::golden_min;
use proptest::prelude::*;
use uavnet::solver::oracles::{bangbang_speed, sic_order, trapezoid_weights, waterfill, SicChannel};

const B: f64 = 1e5;
const NOISE: f64 = 1e-10;
const P_MAX: f64 = 100.0;

/// Energy-minimal split of `data` between two constant-gain groups of total
/// durations `w_hi` and `w_lo`. Within a group the power is constant.
fn two_level_oracle(w_hi: f64, w_lo: f64, eta_hi: f64, eta_lo: f64, data: f64) -> (f64, f64, f64) {
    let power = |bits: f64, w: f64, eta: f64| NOISE / eta * ((bits / (B * w)).exp2() - 1.0);
    let energy = |x: f64| w_hi * power(x, w_hi, eta_hi) + w_lo * power(data - x, w_lo, eta_lo);
    let x = golden_min(energy, 0.0, data);
    (power(x, w_hi, eta_hi), power(data - x, w_lo, eta_lo), energy(x))
}

#[test]
fn waterfill_matches_two_level_search() {
    let times: Vec<f64> = (0..=100).map(|k| k as f64).collect();
    let w = trapezoid_weights(&times);
    for (eta_lo, data) in [(1e-6, 2e7), (3e-8, 1.5e7), (1e-12, 5e6)] {
        let eta_hi = 1e-5;
        let eta: Vec<f64> = (0..=100).map(|k| if k < 50 { eta_hi } else { eta_lo }).collect();
        let w_hi: f64 = w[..50].iter().sum();
        let w_lo: f64 = w[50..].iter().sum();
        let (p_hi, p_lo, e) = two_level_oracle(w_hi, w_lo, eta_hi, eta_lo, data);
        assert!(p_hi < P_MAX && p_lo < P_MAX);
        let wf = waterfill(&times, &eta, data, B, NOISE, P_MAX).unwrap();
        assert!((wf.energy - e).abs() <= 1e-7 * e, "energy {} vs {e}", wf.energy);
        assert!((wf.data - data).abs() <= 1e-6 * data);
        for k in 0..=100 {
            let want = if k < 50 { p_hi } else { p_lo };
            assert!((wf.power[k] - want).abs() <= 1e-5 * p_hi, "k={k}: {} vs {want}", wf.power[k]);
        }
    }
}

#[test]
fn waterfill_constant_channel_is_flat() {
    let times: Vec<f64> = (0..=40).map(|k| 30.0 * k as f64).collect();
    let eta = vec![2e-9; times.len()];
    let data = 3e8;
    let wf = waterfill(&times, &eta, data, B, NOISE, P_MAX).unwrap();
    let exact = NOISE / 2e-9 * ((data / (B * 1200.0)).exp2() - 1.0);
    for p in &wf.power {
        assert!((p - exact).abs() <= 1e-9 * exact);
    }
}

/// Minimal sum power for target rates, scanning the first user's power.
fn sic_brute_force(eta: [f64; 2], rates: [f64; 2]) -> (f64, [f64; 2]) {
    let need = |r: f64| NOISE * ((r / B).exp2() - 1.0);
    let p1_min = need(rates[0]) / eta[0];
    let p2_min = need(rates[1]) / eta[1];
    let sum_rx = need(rates[0] + rates[1]);
    let p2_of = |p1: f64| p2_min.max((sum_rx - eta[0] * p1) / eta[1]);
    let hi = (sum_rx / eta[0]).max(p1_min);
    let n = 200_000;
    let mut best = (f64::INFINITY, [0.0; 2]);
    for i in 0..=n {
        let p1 = p1_min + (hi - p1_min) * i as f64 / n as f64;
        let p2 = p2_of(p1);
        if p1 + p2 < best.0 {
            best = (p1 + p2, [p1, p2]);
        }
    }
    best
}

#[test]
fn sic_order_matches_brute_force() {
    let cases = [([1e6, 4e6], [1e5, 2e5]), ([9e6, 2e6], [3e5, 5e4]), ([2.5e6, 2.6e6], [2e5, 2e5])];
    for (chi, rates) in cases {
        let ch = SicChannel { chi, alpha: 1.5, gain: 1.0, noise: NOISE, bandwidth: B, p_max: P_MAX };
        let r = sic_order(&ch, rates).unwrap();
        let eta = [chi[0].powf(-1.5), chi[1].powf(-1.5)];
        let (best, p) = sic_brute_force(eta, rates);
        assert!((r.sum_power - best).abs() <= 1e-6 * best, "{chi:?}: {} vs {best}", r.sum_power);
        for i in 0..2 {
            assert!((r.power[i] - p[i]).abs() <= 1e-4 * best);
        }
        let nearer = if chi[0] <= chi[1] { 0 } else { 1 };
        assert_eq!(r.order[0], nearer);
        assert_eq!(r.phi as usize, nearer);
    }
}

/// Full-power throughput of a flight at 1 km altitude past a receiver at
/// the origin, midpoint rule on a fine grid.
fn throughput(pos: impl Fn(f64) -> f64, horizon: f64) -> f64 {
    let n = 24_000;
    let h = horizon / n as f64;
    (0..n)
        .map(|i| {
            let q = pos((i as f64 + 0.5) * h);
            let chi = q * q + 1e6;
            h * B * (1.0 + P_MAX * chi.powf(-1.5) / NOISE).log2()
        })
        .sum()
}

fn piecewise_position(speeds: &[f64], horizon: f64, t: f64) -> f64 {
    let dt = horizon / speeds.len() as f64;
    let mut q = 0.0;
    for (i, v) in speeds.iter().enumerate() {
        let a = i as f64 * dt;
        if t <= a {
            break;
        }
        q += v * (t.min(a + dt) - a);
    }
    q
}

#[test]
fn fly_away_switch_time() {
    let p = bangbang_speed(0.0f64, 24_000.0, 12.0, 28.0, 1200.0).unwrap();
    let t1: f64 = (24_000.0 - 28.0 * 1200.0) / (12.0 - 28.0);
    assert_eq!(t1, 600.0);
    assert!((p.t1 - t1).abs() < 1e-9);
    assert_eq!(p.arcs.len(), 2);
    assert!((p.position(1200.0) - 24_000.0).abs() < 1e-6);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn no_admissible_profile_beats_bangbang(u in prop::collection::vec(0.0f64..1.0, 6..12)) {
        let mean = u.iter().sum::<f64>() / u.len() as f64;
        let s = 0.5 / mean;
        prop_assume!(u.iter().all(|x| s * x <= 1.0));
        let speeds: Vec<f64> = u.iter().map(|x| 12.0 + 16.0 * s * x).collect();
        let best = bangbang_speed(0.0, 24_000.0, 12.0, 28.0, 1200.0).unwrap();
        let opt = throughput(|t| best.position(t), 1200.0);
        let other = throughput(|t| piecewise_position(&speeds, 1200.0, t), 1200.0);
        prop_assert!(other <= opt * (1.0 + 1e-9), "{other} > {opt}");
    }
}
