mod common;

use proptest::prelude::*;
use uavnet::channel::{
    decode_check, in_capacity_region, link_gain, mac_subset_gap, received_signal_strength, rice_gain_quantile,
    rice_power_ccdf, BandParams, MacUser,
};
use uavnet::model::{parse_scenario, presets, Limit, MEGABYTE};
use uavnet::propulsion::{drag, propulsion_energy, required_thrust, PropulsionCoeffs};

fn band(alpha: f64) -> BandParams<f64> {
    BandParams { bandwidth: 1e5, noise: 1e-10, antenna_gain: 1.0, alpha }
}

fn limit() -> impl Strategy<Value = Limit> {
    prop_oneof![Just(Limit::PosInf), (1e6f64..1e10).prop_map(Limit::Finite)]
}

fn users(n: std::ops::Range<usize>) -> impl Strategy<Value = Vec<MacUser<f64>>> {
    prop::collection::vec((0.0f64..100.0, 1e5f64..1e8, 0.05f64..2.0), n).prop_map(|v| {
        v.into_iter().map(|(power, chi, h)| MacUser { rate: 0.0, power, chi, h }).collect()
    })
}

fn capacity(mask: u32, u: &[MacUser<f64>], b: &BandParams<f64>) -> f64 {
    let s: Vec<usize> = (0..u.len()).filter(|i| mask & (1 << i) != 0).collect();
    if s.is_empty() {
        0.0
    } else {
        -mac_subset_gap(&s, u, b).unwrap()
    }
}

proptest! {
    #[test]
    fn scenario_json_round_trip(
        data in 0.0f64..80.0,
        lateral in -3000.0f64..3000.0,
        altitude in 200.0f64..3000.0,
        vmin in 5.0f64..15.0,
        span in 1.0f64..20.0,
        memory in limit(),
        v0 in prop::option::of(15.0f64..20.0),
        wind in -8.0f64..8.0,
    ) {
        let mut cfg = presets::two_uav(data * MEGABYTE, 1.0);
        cfg.nodes[2].lateral_offset = lateral;
        cfg.nodes[2].altitude = altitude;
        cfg.nodes[1].speed_min = vmin;
        cfg.nodes[1].speed_max = vmin + span;
        cfg.nodes[1].memory = memory;
        cfg.nodes[1].v_init = v0;
        cfg.sim.wind = wind;
        let back = parse_scenario(&cfg.to_json()).unwrap();
        prop_assert_eq!(back, cfg);
    }

    #[test]
    fn mac_capacity_is_submodular(u in users(2..6), alpha in 1.1f64..4.0) {
        let b = band(alpha);
        let full = 1u32 << u.len();
        for s in 0..full {
            for t in 0..full {
                let lhs = capacity(s | t, &u, &b) + capacity(s & t, &u, &b);
                let rhs = capacity(s, &u, &b) + capacity(t, &u, &b);
                prop_assert!(lhs <= rhs + 1e-9 * rhs.abs().max(1.0), "S={s:b} T={t:b}: {lhs} > {rhs}");
            }
        }
    }

    #[test]
    fn capacity_region_is_monotone_in_power(u in users(2..5), frac in 0.0f64..1.0, boost in 1.0f64..10.0) {
        // rates at a fraction of each single-user bound
        let b = band(1.5);
        let mut u = u;
        let caps: Vec<f64> = (0..u.len()).map(|i| capacity(1 << i, &u, &b)).collect();
        for (x, c) in u.iter_mut().zip(&caps) {
            x.rate = frac * c / caps.len() as f64;
        }
        if in_capacity_region(&u, &b, 1e-9).unwrap() {
            for x in u.iter_mut() {
                x.power *= boost;
            }
            prop_assert!(in_capacity_region(&u, &b, 1e-9).unwrap());
        }
    }

    #[test]
    fn received_strength_is_quasiconcave(
        p1 in 0.0f64..100.0, c1 in 1e3f64..1e8,
        p2 in 0.0f64..100.0, c2 in 1e3f64..1e8,
        lambda in 0.0f64..1.0, alpha in 1.0001f64..5.0,
    ) {
        let g1 = received_signal_strength(p1, c1, alpha);
        let g2 = received_signal_strength(p2, c2, alpha);
        let mid = received_signal_strength(lambda * p1 + (1.0 - lambda) * p2, lambda * c1 + (1.0 - lambda) * c2, alpha);
        prop_assert!(mid >= g1.min(g2) * (1.0 - 1e-12));
    }

    #[test]
    fn gain_decreases_with_distance(c in 1e2f64..1e9, f in 1.0001f64..10.0, alpha in 1.1f64..4.0) {
        prop_assert!(link_gain(c * f, 1.0, 1.0, alpha).unwrap() < link_gain(c, 1.0, 1.0, alpha).unwrap());
    }

    /// `∫ v (D(v) + m a) = ∫ v D(v) + m/2 (v(T)² − v(0)²)` for piecewise
    /// linear speed.
    #[test]
    fn thrust_energy_identity(
        v0 in 12.0f64..28.0,
        accel in prop::collection::vec(-0.05f64..0.05, 4..20),
        mass in 1.0f64..20.0,
    ) {
        let c = PropulsionCoeffs::with_speed_bounds(1.0, 100.0);
        let sub = 50;
        let dt = 10.0 / sub as f64;
        let mut t = vec![0.0];
        let mut v = vec![v0];
        let mut f_drag = vec![drag(v0, &c).unwrap()];
        for (k, &a) in accel.iter().enumerate() {
            for i in 1..=sub {
                let vi = v.last().unwrap() + a * dt;
                t.push((k * sub + i) as f64 * dt);
                v.push(vi);
                f_drag.push(drag(vi, &c).unwrap());
            }
        }
        // the trapezoid rule is exact for `m a v` on each piece
        let mut e_full = 0.0;
        for k in 0..accel.len() {
            let r = k * sub..=(k + 1) * sub;
            let ts: Vec<f64> = t[r.clone()].to_vec();
            let vs: Vec<f64> = v[r.clone()].to_vec();
            let fs: Vec<f64> = vs.iter().map(|&x| required_thrust(x, accel[k], mass, &c).unwrap()).collect();
            e_full += propulsion_energy(&ts, &vs, &fs).unwrap();
        }
        let e_drag = propulsion_energy(&t, &v, &f_drag).unwrap();
        let vk = *v.last().unwrap();
        let identity = e_drag + 0.5 * mass * (vk * vk - v0 * v0);
        prop_assert!((e_full - identity).abs() <= 1e-9 * e_full.abs().max(1.0), "{e_full} vs {identity}");
    }

    #[test]
    fn rice_quantile_inverts_ccdf(kappa in 0.0f64..40.0, eps in 1e-4f64..0.5) {
        let h = rice_gain_quantile(kappa, eps).unwrap();
        prop_assert!((rice_power_ccdf(h, kappa) - (1.0 - eps)).abs() < 1e-9);
    }

    #[test]
    fn stronger_realisation_decodes_everyone(
        planned in prop::collection::vec(1e-12f64..1e-6, 1..6),
        gain in prop::collection::vec(1.0f64..5.0, 6),
    ) {
        let realized: Vec<f64> = planned.iter().zip(&gain).map(|(p, g)| p * g).collect();
        let mask = decode_check(&planned, &realized, 1e-10).unwrap();
        prop_assert!(mask.iter().all(|&d| d));
    }
}
