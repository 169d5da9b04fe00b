//! Closed-form planners for the special cases: power-minimizing
//! water-filling along a fixed trajectory, the throughput-maximizing
//! bang-bang speed profile, and the sum-power-optimal SIC decoding order of
//! a two-user MAC.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::scalar::{lit, Real};

/// Trapezoid weights of a grid.
pub fn trapezoid_weights<T: Real>(times: &[T]) -> Vec<T> {
    let n = times.len();
    let mut w = vec![T::zero(); n];
    let half = lit::<T>(0.5);
    for k in 1..n {
        let h = times[k] - times[k - 1];
        w[k - 1] += half * h;
        w[k] += half * h;
    }
    w
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaterfillResult<T> {
    /// Water level ζ [W].
    pub zeta: T,
    /// Optimal power at each grid point [W].
    pub power: Vec<T>,
    /// Data delivered by `power` [bits].
    pub data: T,
    /// Transmission energy `∫p` [J].
    pub energy: T,
    /// Points where the `p ≤ P_max` bound is active.
    pub at_max: Vec<bool>,
    /// Points where the `p ≥ 0` bound is active.
    pub silent: Vec<bool>,
    /// Largest first-order optimality violation of the clamp solution.
    pub dual_residual: T,
}

fn delivered<T: Real>(w: &[T], eta: &[T], p: &[T], bandwidth: T, noise: T) -> T {
    let mut d = T::zero();
    for k in 0..w.len() {
        d += w[k] * bandwidth * (T::one() + eta[k] * p[k] / noise).log2();
    }
    d
}

fn clamp_power<T: Real>(zeta: T, eta: T, noise: T, p_max: T) -> T {
    (zeta - noise / eta).max(T::zero()).min(p_max)
}

/// Minimum-energy power profile delivering `data` bits over the grid
/// `times` with link gains `eta`: `p*(t) = clamp(ζ − σ²/η(t), 0, P_max)`.
/// Data and energy integrals use the trapezoid rule on the grid.
pub fn waterfill<T: Real>(times: &[T], eta: &[T], data: T, bandwidth: T, noise: T, p_max: T) -> Result<WaterfillResult<T>> {
    if times.len() != eta.len() {
        return Err(Error::Dimension { expected: times.len(), got: eta.len() });
    }
    if times.len() < 2 {
        return Err(domain("water-filling needs at least two grid points"));
    }
    if times.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(domain("grid times must increase strictly"));
    }
    if eta.iter().any(|&e| !(e > T::zero())) {
        return Err(domain("link gains must be positive"));
    }
    if !(bandwidth > T::zero() && noise > T::zero() && p_max > T::zero() && data >= T::zero()) {
        return Err(domain("bandwidth, noise and power cap must be positive"));
    }
    let w = trapezoid_weights(times);
    let full = vec![p_max; eta.len()];
    let cap = delivered(&w, eta, &full, bandwidth, noise);
    if data > cap {
        return Err(Error::Infeasible(format!(
            "{} bits requested but full power delivers only {} bits",
            data, cap
        )));
    }
    let worst = eta.iter().fold(T::zero(), |a, &e| a.max(noise / e));
    let mut lo = T::zero();
    let mut hi = worst + p_max;
    let eval = |z: T| {
        let p: Vec<T> = eta.iter().map(|&e| clamp_power(z, e, noise, p_max)).collect();
        let d = delivered(&w, eta, &p, bandwidth, noise);
        (p, d)
    };
    for _ in 0..400 {
        let mid = lit::<T>(0.5) * (lo + hi);
        if !(mid > lo && mid < hi) {
            break;
        }
        if eval(mid).1 < data {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let zeta = hi;
    let (power, achieved) = eval(zeta);
    let energy = w.iter().zip(&power).fold(T::zero(), |a, (&wk, &pk)| a + wk * pk);
    let at_max: Vec<bool> = power.iter().map(|&p| p >= p_max).collect();
    let silent: Vec<bool> = power.iter().map(|&p| p <= T::zero()).collect();
    // stationarity 1 − ζ η/(σ² + η p) per point, sign-restricted at clamps
    let mut dual = T::zero();
    for k in 0..eta.len() {
        let g = T::one() - zeta * eta[k] / (noise + eta[k] * power[k]);
        let v = if silent[k] {
            (-g).max(T::zero())
        } else if at_max[k] {
            g.max(T::zero())
        } else {
            g.abs()
        };
        dual = dual.max(v);
    }
    Ok(WaterfillResult { zeta, power, data: achieved, energy, at_max, silent, dual_residual: dual })
}

/// Piecewise-constant speed profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeedProfile<T> {
    /// `(start, end, speed)` arcs covering `[0, T]`.
    pub arcs: Vec<(T, T, T)>,
    /// First switching time.
    pub t1: T,
    /// Second switching time of the pass-over profile.
    pub t2: Option<T>,
    pub q_init: T,
    /// Travel direction, ±1.
    pub direction: T,
}

impl<T: Real> SpeedProfile<T> {
    pub fn speed(&self, t: T) -> T {
        for &(a, b, v) in &self.arcs {
            if t >= a && t < b {
                return v;
            }
        }
        self.arcs.last().map(|a| a.2).unwrap_or_else(T::zero)
    }

    pub fn position(&self, t: T) -> T {
        let mut q = self.q_init;
        for &(a, b, v) in &self.arcs {
            if t <= a {
                break;
            }
            q += self.direction * v * (t.min(b) - a);
        }
        q
    }

    pub fn duration(&self) -> T {
        self.arcs.last().map(|a| a.1).unwrap_or_else(T::zero)
    }
}

/// Throughput-maximizing speed profile for a transmitter flying from
/// `q_init` to `q_final` in `horizon` seconds past a receiver at the origin.
/// The slow arc is spent nearest the receiver: slow then fast when flying
/// away (switching at `t₁ = (ΔQ − V̄T)/(V̲ − V̄)`), fast–slow–fast when
/// passing over.
pub fn bangbang_speed<T: Real>(q_init: T, q_final: T, v_min: T, v_max: T, horizon: T) -> Result<SpeedProfile<T>> {
    if !(v_min > T::zero() && v_min < v_max && horizon > T::zero()) {
        return Err(domain("need 0 < V_min < V_max and a positive horizon"));
    }
    let dq = (q_final - q_init).abs();
    let tol = lit::<T>(1e-9) * dq.max(T::one());
    if dq < v_min * horizon - tol || dq > v_max * horizon + tol {
        return Err(Error::Infeasible(format!(
            "distance {dq} not coverable in {horizon} s with speeds [{v_min}, {v_max}]"
        )));
    }
    let dir = if q_final < q_init { -T::one() } else { T::one() };
    // slow distance from (ΔQ − L)/V̄ + L/V̲ = T
    let slow_len = ((horizon - dq / v_max) / (T::one() / v_min - T::one() / v_max)).max(T::zero()).min(dq);
    // arc-length coordinate of the receiver along the path
    let recv = ((T::zero() - q_init) * dir).max(T::zero()).min(dq);
    let half = lit::<T>(0.5) * slow_len;
    let mut a = recv - half;
    let mut b = recv + half;
    if a < T::zero() {
        b -= a;
        a = T::zero();
    }
    if b > dq {
        a -= b - dq;
        b = dq;
    }
    let a = a.max(T::zero());
    let t1 = a / v_max;
    let t2 = t1 + (b - a) / v_min;
    let mut arcs = Vec::new();
    let eps = lit::<T>(1e-12) * horizon;
    if t1 > eps {
        arcs.push((T::zero(), t1, v_max));
    }
    if t2 - t1 > eps {
        arcs.push((t1, t2, v_min));
    }
    if horizon - t2 > eps {
        arcs.push((t2, horizon, v_max));
    }
    if arcs.is_empty() {
        arcs.push((T::zero(), horizon, v_max));
    }
    let (t1, t2) = if a <= eps * v_max {
        // slow first: the only switch is at the end of the slow arc
        (t2, None)
    } else if b >= dq - eps * v_max {
        (t1, None)
    } else {
        (t1, Some(t2))
    };
    Ok(SpeedProfile { arcs, t1, t2, q_init, direction: dir })
}

/// Channel of a two-user MAC at one instant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SicChannel<T> {
    /// Squared distances of the two users [m²].
    pub chi: [T; 2],
    pub alpha: T,
    /// `G·h`, the distance-free part of the link gain.
    pub gain: T,
    pub noise: T,
    pub bandwidth: T,
    pub p_max: T,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SicResult<T> {
    /// User indices in decoding order.
    pub order: [usize; 2],
    /// Corner label: 0 when user 0 is decoded first, 1 otherwise.
    pub phi: u8,
    pub power: [T; 2],
    pub sum_power: T,
}

/// Sum-power-optimal powers for target `rates`: the user with the better
/// channel (smaller χ) is decoded first, treating the other as interference,
/// and the other user then sees an interference-free channel. Equal
/// distances decode user 0 first.
pub fn sic_order<T: Real>(ch: &SicChannel<T>, rates: [T; 2]) -> Result<SicResult<T>> {
    if ch.chi.iter().any(|&c| !(c > T::zero())) {
        return Err(domain("squared distances must be positive"));
    }
    if rates.iter().any(|&r| r < T::zero()) {
        return Err(domain("rates must be non-negative"));
    }
    let eta = [ch.gain * ch.chi[0].powf(-ch.alpha), ch.gain * ch.chi[1].powf(-ch.alpha)];
    let first = if ch.chi[0] <= ch.chi[1] { 0 } else { 1 };
    let last = 1 - first;
    let two = lit::<T>(2.0);
    let rx_last = ch.noise * (two.powf(rates[last] / ch.bandwidth) - T::one());
    let rx_first = (ch.noise + rx_last) * (two.powf(rates[first] / ch.bandwidth) - T::one());
    let mut power = [T::zero(); 2];
    power[last] = rx_last / eta[last];
    power[first] = rx_first / eta[first];
    if power.iter().any(|&p| p > ch.p_max) {
        return Err(Error::Infeasible(format!(
            "rates ({}, {}) need powers ({}, {}) above P_max",
            rates[0], rates[1], power[0], power[1]
        )));
    }
    Ok(SicResult { order: [first, last], phi: first as u8, power, sum_power: power[0] + power[1] })
}
