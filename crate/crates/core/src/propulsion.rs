//! Fixed-wing longitudinal dynamics: drag, thrust balance and propulsion
//! energy.
//!
//! Drag is `D(v) = C_D1 v² + C_D2 v⁻²` on the admissible speed interval and
//! undefined (infinite) outside it. `v ↦ v D(v)` is convex on any interval of
//! positive speeds, which is what makes constant-speed cruise the cheapest
//! way to cover a fixed distance.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::scalar::{lit, Real};

pub const DEFAULT_CD1: f64 = 9.26e-4;
pub const DEFAULT_CD2: f64 = 2250.0;
pub const GRAVITY: f64 = 9.81;

/// Drag-law coefficients together with the admissible speed interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PropulsionCoeffs<T> {
    /// Parasitic coefficient [kg/m].
    pub c_d1: T,
    /// Induced coefficient [kg·m³/s⁴].
    pub c_d2: T,
    pub v_min: T,
    pub v_max: T,
}

impl<T: Real> PropulsionCoeffs<T> {
    pub fn new(c_d1: T, c_d2: T, v_min: T, v_max: T) -> Result<Self> {
        if !(c_d1 > T::zero() && c_d2 > T::zero()) {
            return Err(domain("drag coefficients must be positive"));
        }
        if !(v_min >= T::zero() && v_min <= v_max) {
            return Err(domain(format!("invalid speed interval [{v_min}, {v_max}]")));
        }
        Ok(Self { c_d1, c_d2, v_min, v_max })
    }

    /// Default coefficients on the given speed interval.
    pub fn with_speed_bounds(v_min: T, v_max: T) -> Self {
        Self {
            c_d1: lit(DEFAULT_CD1),
            c_d2: lit(DEFAULT_CD2),
            v_min,
            v_max,
        }
    }

    pub fn contains(&self, v: T) -> bool {
        v >= self.v_min && v <= self.v_max
    }

    /// Drag formula without the domain check.
    #[inline]
    pub fn drag_unchecked(&self, v: T) -> T {
        self.c_d1 * v * v + self.c_d2 / (v * v)
    }

    /// `v·D(v)` without the domain check.
    #[inline]
    pub fn drag_power_unchecked(&self, v: T) -> T {
        self.c_d1 * v * v * v + self.c_d2 / v
    }

    /// Speed minimising `v·D(v)`; usually far above the admissible interval.
    pub fn min_power_speed(&self) -> T {
        // d/dv (c1 v³ + c2/v) = 0  =>  v⁴ = c2 / (3 c1)
        (self.c_d2 / (lit::<T>(3.0) * self.c_d1)).powf(lit(0.25))
    }

    /// Speed minimising `D(v)` itself: `(C_D2/C_D1)^{1/4}`.
    pub fn min_drag_speed(&self) -> T {
        (self.c_d2 / self.c_d1).powf(lit(0.25))
    }
}

impl Default for PropulsionCoeffs<f64> {
    fn default() -> Self {
        Self::with_speed_bounds(12.0, 28.0)
    }
}

/// Physical parameters of a fixed-wing airframe in level flight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysicalAirframe<T> {
    /// Air density [kg/m³].
    pub rho: T,
    /// Zero-lift drag coefficient.
    pub c_d0: T,
    /// Wing area [m²].
    pub wing_area: T,
    /// Oswald efficiency factor.
    pub oswald: T,
    pub aspect_ratio: T,
    /// Lift [N]; equals the weight `m g` in level flight.
    pub lift: T,
}

impl<T: Real> PhysicalAirframe<T> {
    /// Airframe with sea-level density, 0.5 m² wing and e₀ = 0.8 whose
    /// remaining parameters are chosen so that it reproduces `coeffs` at the
    /// given mass.
    pub fn matching(c_d1: T, c_d2: T, mass: T) -> Self {
        let rho = lit::<T>(1.225);
        let wing_area = lit::<T>(0.5);
        let oswald = lit::<T>(0.8);
        let lift = mass * lit(GRAVITY);
        let two = lit::<T>(2.0);
        let c_d0 = two * c_d1 / (rho * wing_area);
        let aspect_ratio = two * lift * lift / (c_d2 * T::PI() * oswald * rho * wing_area);
        Self { rho, c_d0, wing_area, oswald, aspect_ratio, lift }
    }

    /// Parasitic plus lift-induced drag evaluated directly from the airframe.
    pub fn drag(&self, v: T) -> T {
        let two = lit::<T>(2.0);
        self.rho * self.c_d0 * self.wing_area * v * v / two
            + two * self.lift * self.lift
                / (T::PI() * self.oswald * self.aspect_ratio * self.rho * self.wing_area * v * v)
    }
}

impl Default for PhysicalAirframe<f64> {
    fn default() -> Self {
        Self::matching(DEFAULT_CD1, DEFAULT_CD2, 3.0)
    }
}

/// Collapses an airframe into drag-law coefficients on the speed interval
/// `[v_min, v_max]`.
pub fn coeffs_from_physical<T: Real>(
    af: &PhysicalAirframe<T>,
    v_min: T,
    v_max: T,
) -> Result<PropulsionCoeffs<T>> {
    let fields = [af.rho, af.c_d0, af.wing_area, af.oswald, af.aspect_ratio, af.lift];
    if fields.iter().any(|f| !(*f > T::zero())) {
        return Err(domain("airframe parameters must be strictly positive"));
    }
    let two = lit::<T>(2.0);
    let c_d1 = af.rho * af.c_d0 * af.wing_area / two;
    let c_d2 = two * af.lift * af.lift / (T::PI() * af.oswald * af.aspect_ratio * af.rho * af.wing_area);
    PropulsionCoeffs::new(c_d1, c_d2, v_min, v_max)
}

/// Drag force [N]. Outside the admissible interval the drag is infinite and
/// reported as a domain error.
pub fn drag<T: Real>(v: T, c: &PropulsionCoeffs<T>) -> Result<T> {
    if !c.contains(v) || v <= T::zero() {
        return Err(domain(format!(
            "speed {v} outside admissible interval [{}, {}]",
            c.v_min, c.v_max
        )));
    }
    Ok(c.drag_unchecked(v))
}

/// Thrust required for speed `v` and acceleration `a`: `F = D(v) + m a`.
pub fn required_thrust<T: Real>(v: T, accel: T, mass: T, c: &PropulsionCoeffs<T>) -> Result<T> {
    Ok(drag(v, c)? + mass * accel)
}

/// Trapezoidal integral of `F(t) v(t)` over a common time grid [J].
pub fn propulsion_energy<T: Real>(times: &[T], speed: &[T], thrust: &[T]) -> Result<T> {
    if speed.len() != times.len() {
        return Err(Error::Dimension { expected: times.len(), got: speed.len() });
    }
    if thrust.len() != times.len() {
        return Err(Error::Dimension { expected: times.len(), got: thrust.len() });
    }
    let half = lit::<T>(0.5);
    let mut e = T::zero();
    for k in 1..times.len() {
        let dt = times[k] - times[k - 1];
        e += half * dt * (thrust[k] * speed[k] + thrust[k - 1] * speed[k - 1]);
    }
    Ok(e)
}

/// Energy of cruising at constant speed `v` for `duration` seconds.
pub fn cruise_energy<T: Real>(v: T, duration: T, c: &PropulsionCoeffs<T>) -> Result<T> {
    Ok(duration * v * drag(v, c)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn table1() -> PropulsionCoeffs<f64> {
        PropulsionCoeffs::default()
    }

    #[test]
    fn drag_hand_values() {
        let c = table1();
        assert_relative_eq!(drag(20.0, &c).unwrap(), 0.3704 + 5.625, epsilon = 1e-12);
        assert_relative_eq!(drag(12.0, &c).unwrap(), 0.133344 + 15.625, epsilon = 1e-9);
    }

    #[test]
    fn minimum_drag_speed_is_outside_domain() {
        let c = table1();
        let v = c.min_drag_speed();
        assert!((v - 39.48).abs() < 0.01, "{v}");
        assert!(matches!(drag(v, &c), Err(Error::Domain(_))));
    }

    #[test]
    fn thrust_balance() {
        let c = table1();
        assert_relative_eq!(required_thrust(20.0, 0.0, 3.0, &c).unwrap(), 5.9954, epsilon = 1e-12);
        assert_relative_eq!(required_thrust(20.0, 1.0, 3.0, &c).unwrap(), 8.9954, epsilon = 1e-12);
        assert_relative_eq!(required_thrust(20.0, -2.0, 3.0, &c).unwrap(), -0.0046, epsilon = 1e-12);
    }

    #[test]
    fn cruise_energies() {
        let c = table1();
        let e20 = cruise_energy(20.0, 1200.0, &c).unwrap();
        assert!((e20 / 1e3 - 143.9).abs() < 0.05, "{e20}");
        let e12 = cruise_energy(12.0, 1200.0, &c).unwrap();
        assert!((e12 / 1e3 - 226.9).abs() < 0.05, "{e12}");
    }

    #[test]
    fn energy_integral_matches_cruise_formula() {
        let c = table1();
        let n = 101;
        let t: Vec<f64> = (0..n).map(|k| 12.0 * k as f64).collect();
        let v = vec![20.0; n];
        let f = vec![c.drag_unchecked(20.0); n];
        let e = propulsion_energy(&t, &v, &f).unwrap();
        assert_relative_eq!(e, 1200.0 * (c.c_d1 * 8000.0 + c.c_d2 / 20.0), max_relative = 1e-12);
        assert_eq!(propulsion_energy::<f64>(&[], &[], &[]).unwrap(), 0.0);
        assert_eq!(propulsion_energy(&[0.0], &[20.0], &[1.0]).unwrap(), 0.0);
        assert!(propulsion_energy(&t, &v[1..], &f).is_err());
    }

    #[test]
    fn default_airframe_reproduces_default_coefficients() {
        let af = PhysicalAirframe::default();
        let c = coeffs_from_physical(&af, 12.0, 28.0).unwrap();
        assert_relative_eq!(c.c_d1, DEFAULT_CD1, max_relative = 1e-12);
        assert_relative_eq!(c.c_d2, DEFAULT_CD2, max_relative = 1e-12);
    }

    #[test]
    fn doubling_density_scales_coefficients() {
        let af = PhysicalAirframe::default();
        let c = coeffs_from_physical(&af, 12.0, 28.0).unwrap();
        let dense = PhysicalAirframe { rho: 2.0 * af.rho, ..af };
        let c2 = coeffs_from_physical(&dense, 12.0, 28.0).unwrap();
        assert_relative_eq!(c2.c_d1, 2.0 * c.c_d1, max_relative = 1e-12);
        assert_relative_eq!(c2.c_d2, 0.5 * c.c_d2, max_relative = 1e-12);
    }

    #[test]
    fn airframe_rejects_non_positive_fields() {
        let af = PhysicalAirframe { wing_area: 0.0, ..PhysicalAirframe::default() };
        assert!(coeffs_from_physical(&af, 12.0, 28.0).is_err());
    }

    #[test]
    fn works_in_single_precision() {
        let c = PropulsionCoeffs::<f32>::with_speed_bounds(12.0, 28.0);
        let d = drag(20.0f32, &c).unwrap();
        assert!((d - 5.9954).abs() < 1e-4);
    }
}
