//! Channel physics: link gains, MAC capacity-region constraint functions,
//! ε-outage effective gains, Rician fading and decoding-region membership.
//!
//! Note that `chi` is always the *squared* distance and the path-loss
//! exponent applies to it directly, so `α = 1.5` means received power falls
//! off with the cube of the distance.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::scalar::Real;

/// Rice factors at or above this value are treated as a pure line-of-sight
/// channel (`h = 1`).
pub const KAPPA_NO_FADING: f64 = 1e12;

/// Largest number of transmitters sharing one receiver band.
pub const MAX_BAND_USERS: usize = 16;

/// Relative SNIR shortfall still counted as decoded. Plans sit on the
/// capacity boundary, so a realisation equal to the plan up to rounding
/// must not be a loss.
pub const DECODE_RTOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ChannelMode {
    #[default]
    Awgn,
    SlowFading,
}

/// Statistical description of the links.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelSpec {
    #[serde(default)]
    pub mode: ChannelMode,
    /// Rice K-factor.
    #[serde(default = "default_rice_k")]
    pub rice_k: f64,
    /// Outage probability ε.
    #[serde(default = "default_outage")]
    pub outage: f64,
    /// Coherence / packet interval [s].
    #[serde(default = "default_packet_s", rename = "packet_interval_s")]
    pub packet_interval: f64,
}

fn default_rice_k() -> f64 {
    10.0
}
fn default_outage() -> f64 {
    0.01
}
fn default_packet_s() -> f64 {
    1.0
}

impl Default for ChannelSpec {
    fn default() -> Self {
        Self {
            mode: ChannelMode::Awgn,
            rice_k: default_rice_k(),
            outage: default_outage(),
            packet_interval: default_packet_s(),
        }
    }
}

/// Squared distance and its components between two nodes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkGeometry<T> {
    pub longitudinal: T,
    pub lateral: T,
    pub vertical: T,
}

impl<T: Real> LinkGeometry<T> {
    pub fn new(longitudinal: T, lateral: T, vertical: T) -> Self {
        Self { longitudinal, lateral, vertical }
    }

    pub fn squared_distance(&self) -> T {
        self.longitudinal * self.longitudinal
            + self.lateral * self.lateral
            + self.vertical * self.vertical
    }
}

/// Link gain `h G / χ^α`.
pub fn link_gain<T: Real>(chi: T, h: T, g: T, alpha: T) -> Result<T> {
    if !(chi > T::zero()) {
        return Err(domain(format!("squared distance must be positive, got {chi}")));
    }
    if h < T::zero() {
        return Err(domain("channel gain must be non-negative"));
    }
    if !(alpha > T::one()) {
        return Err(domain("path loss exponent must exceed 1"));
    }
    Ok(h * g / chi.powf(alpha))
}

/// Received signal strength `Γ(p, χ) = p / χ^α` with unit antenna and
/// channel gain. Quasiconcave on the positive quadrant.
pub fn received_signal_strength<T: Real>(power: T, chi: T, alpha: T) -> T {
    power / chi.powf(alpha)
}

/// Receiver-side constants shared by every transmitter on one band.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BandParams<T> {
    /// Bandwidth [Hz].
    pub bandwidth: T,
    /// Noise power [W].
    pub noise: T,
    pub antenna_gain: T,
    pub alpha: T,
}

/// One transmitter's operating point on a receiver band.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MacUser<T> {
    /// Rate [bit/s].
    pub rate: T,
    /// Power [W].
    pub power: T,
    /// Squared distance to the receiver [m²].
    pub chi: T,
    /// Channel gain used for planning.
    pub h: T,
}

/// Capacity-region constraint for the transmitter subset `subset`
/// (indices into `users`):
/// `Σ_S r − B log₂(1 + Σ_S η p / σ²)`. Feasible iff the result is `≤ 0`.
pub fn mac_subset_gap<T: Real>(subset: &[usize], users: &[MacUser<T>], band: &BandParams<T>) -> Result<T> {
    let mut rate = T::zero();
    let mut snr = T::zero();
    for &i in subset {
        let u = users
            .get(i)
            .ok_or_else(|| domain(format!("subset index {i} out of range")))?;
        rate += u.rate;
        snr += link_gain(u.chi, u.h, band.antenna_gain, band.alpha)? * u.power / band.noise;
    }
    Ok(rate - band.bandwidth * (T::one() + snr).log2())
}

/// Checks every nonempty subset of `users`; true iff the rate tuple lies in
/// the capacity region (with tolerance `tol` on each gap).
pub fn in_capacity_region<T: Real>(users: &[MacUser<T>], band: &BandParams<T>, tol: T) -> Result<bool> {
    if users.len() > MAX_BAND_USERS {
        return Err(Error::SubsetCap { count: users.len(), cap: MAX_BAND_USERS });
    }
    for mask in 1u32..(1u32 << users.len()) {
        let subset: Vec<usize> = (0..users.len()).filter(|i| mask & (1 << i) != 0).collect();
        if mac_subset_gap(&subset, users, band)? > tol {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Complementary CDF `Pr{h ≥ x}` of the received power gain `h = ν²` with
/// `ν` Rice distributed with line-of-sight amplitude `√(κ/(κ+1))` and
/// scatter spread `√(1/(2(κ+1)))` (so that `E[h] = 1`).
///
/// `h(κ+1)·2` is non-central χ² with two degrees of freedom and
/// non-centrality `2κ`; the first-order Marcum Q-function is evaluated via
/// its Poisson-mixture series, `Pr{N_u ≤ J}` with `J ~ Poisson(κ)` and
/// `N_u ~ Poisson((κ+1)x)`.
pub fn rice_power_ccdf(x: f64, kappa: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    if kappa >= KAPPA_NO_FADING {
        return if x <= 1.0 { 1.0 } else { 0.0 };
    }
    if kappa > 1e6 {
        // Series would need O(κ) terms; the gain is then Gaussian to
        // excellent accuracy.
        let s2 = kappa / (kappa + 1.0);
        let sig2 = 0.5 / (kappa + 1.0);
        let mean = s2 + 2.0 * sig2;
        let sd = (4.0 * s2 * sig2 + 4.0 * sig2 * sig2).sqrt();
        return 0.5 * erfc((x - mean) / (sd * std::f64::consts::SQRT_2));
    }
    let u = (kappa + 1.0) * x;
    let ln_u = u.ln();
    let ln_k = if kappa > 0.0 { kappa.ln() } else { f64::NEG_INFINITY };
    let mut ln_fact = 0.0;
    let mut cdf_u = 0.0;
    let mut mass_k = 0.0;
    let mut sum = 0.0;
    let mut j = 0usize;
    loop {
        if j > 0 {
            ln_fact += (j as f64).ln();
        }
        let jf = j as f64;
        cdf_u = (cdf_u + (-u + jf * ln_u - ln_fact).exp()).min(1.0);
        let pk = if kappa == 0.0 {
            if j == 0 { 1.0 } else { 0.0 }
        } else {
            (-kappa + jf * ln_k - ln_fact).exp()
        };
        mass_k += pk;
        sum += pk * cdf_u;
        if jf > kappa && (pk < 1e-18 || 1.0 - mass_k < 1e-17) {
            break;
        }
        if jf > kappa && cdf_u >= 1.0 {
            sum += (1.0 - mass_k).max(0.0);
            break;
        }
        j += 1;
    }
    sum.clamp(0.0, 1.0)
}

fn erfc(x: f64) -> f64 {
    // Numerical Recipes erfc approximation (relative error < 1.2e-7).
    let z = x.abs();
    let t = 1.0 / (1.0 + 0.5 * z);
    let r = t * (-z * z - 1.26551223
        + t * (1.00002368
            + t * (0.37409196
                + t * (0.09678418
                    + t * (-0.18628806
                        + t * (0.27886807
                            + t * (-1.13520398 + t * (1.48851587 + t * (-0.82215223 + t * 0.17087277)))))))))
        .exp();
    if x >= 0.0 { r } else { 2.0 - r }
}

/// Quantile `F_h⁻¹(1 − ε)` of the Rician power gain, found by bisection on
/// [`rice_power_ccdf`] to 1e-10 absolute tolerance.
pub fn rice_gain_quantile(kappa: f64, outage: f64) -> Result<f64> {
    if !(outage > 0.0 && outage < 1.0) {
        return Err(Error::NoConvergence(format!("outage {outage} not in (0, 1)")));
    }
    if !(kappa >= 0.0) {
        return Err(Error::NoConvergence(format!("rice factor {kappa} negative")));
    }
    if kappa >= KAPPA_NO_FADING {
        return Ok(1.0);
    }
    let target = 1.0 - outage;
    let mut lo = 0.0;
    let mut hi = 2.0;
    let mut grow = 0;
    while rice_power_ccdf(hi, kappa) >= target {
        lo = hi;
        hi *= 2.0;
        grow += 1;
        if grow > 60 {
            return Err(Error::NoConvergence("no upper bracket for gain quantile".into()));
        }
    }
    for _ in 0..200 {
        if hi - lo <= 1e-10 {
            return Ok(0.5 * (lo + hi));
        }
        let mid = 0.5 * (lo + hi);
        if rice_power_ccdf(mid, kappa) >= target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Err(Error::NoConvergence(format!("kappa={kappa} outage={outage}")))
}

/// Outage probability whose quantile equals `gain`: the inverse of
/// [`rice_gain_quantile`].
pub fn outage_for_gain(kappa: f64, gain: f64) -> f64 {
    1.0 - rice_power_ccdf(gain, kappa)
}

/// Effective channel gain used in the planning constraints: `1` for AWGN,
/// the ε-outage quantile for slow fading.
pub fn effective_gain(spec: &ChannelSpec) -> Result<f64> {
    match spec.mode {
        ChannelMode::Awgn => Ok(1.0),
        ChannelMode::SlowFading => rice_gain_quantile(spec.rice_k, spec.outage),
    }
}

/// Draws one power-gain realisation `h̃ = ν²`, `ν ~ Rice(√(κ/(κ+1)), √(1/(2(κ+1))))`.
pub fn sample_fading<R: Rng + ?Sized>(kappa: f64, rng: &mut R) -> f64 {
    if kappa >= KAPPA_NO_FADING {
        return 1.0;
    }
    let s = (kappa / (kappa + 1.0)).sqrt();
    let sigma = (0.5 / (kappa + 1.0)).sqrt();
    let x: f64 = rng.sample(StandardNormal);
    let y: f64 = rng.sample(StandardNormal);
    let re = s + sigma * x;
    let im = sigma * y;
    re * re + im * im
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Independent fading stream for one link and packet index, derived from
/// the scenario seed. Packets can be sampled in any order.
pub fn link_rng(seed: u64, link: u64, packet: u64) -> ChaCha8Rng {
    let k = splitmix64(splitmix64(splitmix64(seed) ^ link.wrapping_mul(0xa076_1d64_78bd_642f)) ^ packet);
    ChaCha8Rng::seed_from_u64(k)
}

/// Largest subset of users that can be decoded when the realised received
/// powers are `realized` and the rates were planned on the boundary of the
/// capacity region for received powers `planned`.
///
/// A subset `S` is decodable when, treating the rest `S'` as interference,
/// the realised SNIR of every `M ⊆ S` is at least the planned SNIR (up to
/// [`DECODE_RTOL`]). Subsets are tried in descending cardinality; ties go to
/// the subset whose members have the larger planned powers. Users with zero
/// planned power are not transmitting and are never reported. Returns a
/// membership mask.
pub fn decode_check<T: Real>(planned: &[T], realized: &[T], noise: T) -> Result<Vec<bool>> {
    if planned.len() != realized.len() {
        return Err(Error::Dimension { expected: planned.len(), got: realized.len() });
    }
    let active: Vec<usize> = (0..planned.len()).filter(|&i| planned[i] > T::zero()).collect();
    if active.len() > MAX_BAND_USERS {
        return Err(Error::SubsetCap { count: active.len(), cap: MAX_BAND_USERS });
    }
    let n = active.len();
    let mut best: Option<(u32, Vec<T>)> = None;
    for card in (1..=n as u32).rev() {
        for mask in 1u32..(1u32 << n) {
            if mask.count_ones() != card {
                continue;
            }
            if !subset_decodable(mask, &active, planned, realized, noise) {
                continue;
            }
            let mut key: Vec<T> = (0..n).filter(|j| mask & (1 << j) != 0).map(|j| planned[active[j]]).collect();
            key.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
            let better = match &best {
                None => true,
                Some((_, bk)) => key
                    .iter()
                    .zip(bk.iter())
                    .find(|(a, b)| a != b)
                    .map(|(a, b)| a > b)
                    .unwrap_or(false),
            };
            if better {
                best = Some((mask, key));
            }
        }
        if best.is_some() {
            break;
        }
    }
    let mut out = vec![false; planned.len()];
    if let Some((mask, _)) = best {
        for (j, &i) in active.iter().enumerate() {
            out[i] = mask & (1 << j) != 0;
        }
    }
    Ok(out)
}

fn subset_decodable<T: Real>(mask: u32, active: &[usize], planned: &[T], realized: &[T], noise: T) -> bool {
    let n = active.len();
    let mut interf_plan = T::zero();
    let mut interf_real = T::zero();
    for (j, &i) in active.iter().enumerate() {
        if mask & (1 << j) == 0 {
            interf_plan += planned[i];
            interf_real += realized[i];
        }
    }
    // iterate over every nonempty M ⊆ S
    let mut sub = mask;
    while sub != 0 {
        let mut sp = T::zero();
        let mut sr = T::zero();
        for (j, &i) in active.iter().enumerate().take(n) {
            if sub & (1 << j) != 0 {
                sp += planned[i];
                sr += realized[i];
            }
        }
        // compare sr/(σ²+Ir) ≥ sp/(σ²+Ip) without dividing
        if sr * (noise + interf_plan) * (T::one() + T::lit(DECODE_RTOL)) < sp * (noise + interf_real) {
            return false;
        }
        sub = (sub - 1) & mask;
    }
    true
}

/// Planned received power `η(χ, h_eff) p`.
pub fn received_power<T: Real>(power: T, chi: T, h: T, g: T, alpha: T) -> Result<T> {
    Ok(link_gain(chi, h, g, alpha)? * power)
}

/// Convenience: Shannon rate `B log₂(1 + x)` for SNR `x`.
pub fn shannon_rate<T: Real>(bandwidth: T, snr: T) -> T {
    bandwidth * (T::one() + snr).log2()
}

/// Inverse of [`shannon_rate`]: SNR needed for `rate` on `bandwidth`.
pub fn snr_for_rate<T: Real>(bandwidth: T, rate: T) -> T {
    (rate / bandwidth).exp2() - T::one()
}

/// Maps `h_eff` into the outage that yields it; used to build scenarios
/// that are parameterised by their effective gain.
pub fn channel_for_effective_gain(kappa: f64, gain: f64, packet_interval: f64) -> ChannelSpec {
    ChannelSpec {
        mode: ChannelMode::SlowFading,
        rice_k: kappa,
        outage: outage_for_gain(kappa, gain),
        packet_interval,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn band(b: f64) -> BandParams<f64> {
        BandParams { bandwidth: b, noise: 1.0, antenna_gain: 1.0, alpha: 1.5 }
    }

    #[test]
    fn link_gain_values() {
        assert_eq!(link_gain(1.0, 1.0, 1.0, 1.5).unwrap(), 1.0);
        assert_relative_eq!(link_gain(4.0, 1.0, 1.0, 1.5).unwrap(), 0.125);
        let g = link_gain(1e6, 1.0, 1.0, 1.5).unwrap();
        assert_relative_eq!(g, 1e-9, max_relative = 1e-12);
        assert_relative_eq!(g * 100.0 / 1e-10, 1000.0, max_relative = 1e-12);
        assert!(link_gain(0.0, 1.0, 1.0, 1.5).is_err());
        assert!(link_gain(-1.0, 1.0, 1.0, 1.5).is_err());
    }

    #[test]
    fn single_user_boundary() {
        let users = [MacUser { rate: 1e5, power: 1.0, chi: 1.0, h: 1.0 }];
        assert_eq!(mac_subset_gap(&[0], &users, &band(1e5)).unwrap(), 0.0);
    }

    #[test]
    fn two_user_sum_rate_gap() {
        let u = MacUser { rate: 1e5, power: 1.0, chi: 1.0, h: 1.0 };
        let users = [u, u];
        let gap = mac_subset_gap(&[0, 1], &users, &band(1e5)).unwrap();
        assert_relative_eq!(gap, 2e5 - 1e5 * 3f64.log2(), max_relative = 1e-12);
        assert!((gap - 4.15e4).abs() < 100.0);
        assert!(!in_capacity_region(&users, &band(1e5), 0.0).unwrap());
    }

    #[test]
    fn zero_rates_always_feasible() {
        let users: Vec<_> = (0..4)
            .map(|i| MacUser { rate: 0.0, power: i as f64 * 3.0, chi: 1.0 + i as f64, h: 1.0 })
            .collect();
        assert!(in_capacity_region(&users, &band(1e5), 0.0).unwrap());
    }

    #[test]
    fn gap_rejects_bad_distance() {
        let users = [MacUser { rate: 1.0, power: 1.0, chi: 0.0, h: 1.0 }];
        assert!(mac_subset_gap(&[0], &users, &band(1.0)).is_err());
    }

    #[test]
    fn awgn_effective_gain_is_one() {
        assert_eq!(effective_gain(&ChannelSpec::default()).unwrap(), 1.0);
    }

    #[test]
    fn rayleigh_ccdf_is_exponential() {
        for x in [0.01, 0.3, 1.0, 2.5, 7.0] {
            assert_relative_eq!(rice_power_ccdf(x, 0.0), (-x).exp(), max_relative = 1e-12);
        }
    }

    #[test]
    fn quantile_inverts_ccdf() {
        for (k, eps) in [(10.0, 0.5), (10.0, 0.01), (3.0, 0.2), (0.0, 0.1)] {
            let q = rice_gain_quantile(k, eps).unwrap();
            assert!((rice_power_ccdf(q, k) - (1.0 - eps)).abs() < 1e-8);
        }
        assert_relative_eq!(rice_gain_quantile(0.0, 0.1).unwrap(), -(0.9f64).ln(), max_relative = 1e-8);
    }

    #[test]
    fn gain_02_roundtrip() {
        let eps = outage_for_gain(10.0, 0.2);
        assert!(eps > 0.0 && eps < 0.01, "{eps}");
        let spec = channel_for_effective_gain(10.0, 0.2, 1.0);
        assert!((effective_gain(&spec).unwrap() - 0.2).abs() < 1e-8);
    }

    #[test]
    fn quantile_bad_inputs() {
        assert!(rice_gain_quantile(10.0, 0.0).is_err());
        assert!(rice_gain_quantile(10.0, 1.0).is_err());
        assert!(rice_gain_quantile(-1.0, 0.5).is_err());
    }

    #[test]
    fn no_fading_limit() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10 {
            assert_eq!(sample_fading(KAPPA_NO_FADING, &mut rng), 1.0);
        }
        assert_eq!(rice_gain_quantile(1e12, 0.3).unwrap(), 1.0);
    }

    #[test]
    fn decode_single_user() {
        assert_eq!(decode_check(&[1.0], &[1.5], 1.0).unwrap(), vec![true]);
        assert_eq!(decode_check(&[1.0], &[1.0], 1.0).unwrap(), vec![true]);
        assert_eq!(decode_check(&[1.0], &[0.0], 1.0).unwrap(), vec![false]);
        assert_eq!(decode_check(&[0.0], &[0.0], 1.0).unwrap(), vec![false]);
    }

    #[test]
    fn decode_identity_keeps_everyone() {
        let b = [0.3, 2.0, 1e-3];
        assert_eq!(decode_check(&b, &b, 1e-2).unwrap(), vec![true; 3]);
    }

    #[test]
    fn decode_prefers_stronger_user_on_ties() {
        // user 1 faded heavily: only one user can be decoded, and both
        // singletons pass when each is decoded treating the other as noise
        let planned = [1.0, 2.0];
        let realized = [1.0, 2.0 * 0.0];
        let d = decode_check(&planned, &realized, 1.0).unwrap();
        assert_eq!(d, vec![true, false]);
    }
}
