//! Flory-Huggins mixing entropy, its quadratic-tail regularization, and the
//! elastic (pressure) free energy.
//!
//! Every evaluation goes through `|c|` so that even functions are bitwise even
//! and odd functions bitwise odd.

use crate::error::{Error, Result};
use crate::real::Real;

/// Material constants shared by the potential and the pressure law.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PotentialParams<T> {
    /// Entropy temperature.
    pub theta: T,
    /// Critical temperature; phase separation needs `theta < theta0`.
    pub theta0: T,
    /// Adiabatic exponent of `p = rho^gamma`.
    pub gamma: T,
}

impl<T: Real> PotentialParams<T> {
    pub fn new(theta: T, theta0: T, gamma: T) -> Result<Self> {
        let p = Self { theta, theta0, gamma };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.theta > T::zero() && self.theta < self.theta0) || !self.theta0.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "thermodynamical condition 0 < theta < theta0 violated (theta = {}, theta0 = {})",
                self.theta, self.theta0
            )));
        }
        if !(self.gamma > T::lit(1.5)) || !self.gamma.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "adiabatic exponent must satisfy gamma > 3/2 (gamma = {})",
                self.gamma
            )));
        }
        Ok(())
    }
}

fn domain_err<T: Real>(what: &'static str, c: T, domain: &'static str) -> Error {
    Error::Domain {
        what,
        value: c.to_f64_lossy(),
        domain,
    }
}

#[inline]
fn fh_abs<T: Real>(a: T, theta: T) -> T {
    let half = T::lit(0.5);
    if a == T::one() {
        return theta * T::LN_2();
    }
    half * theta * ((T::one() + a) * a.ln_1p() + (T::one() - a) * (-a).ln_1p())
}

#[inline]
fn fh_prime_abs<T: Real>(a: T, theta: T) -> T {
    theta * a.atanh()
}

#[inline]
fn fh_second_abs<T: Real>(a: T, theta: T) -> T {
    theta / ((T::one() - a) * (T::one() + a))
}

#[inline]
fn fh_third_abs<T: Real>(a: T, theta: T) -> T {
    let d = (T::one() - a) * (T::one() + a);
    T::lit(2.0) * theta * a / (d * d)
}

/// `F(c) = theta/2 [(1+c) ln(1+c) + (1-c) ln(1-c)]`, extended by `theta ln 2` at `c = +-1`.
pub fn flory_huggins<T: Real>(c: T, theta: T) -> Result<T> {
    let a = c.abs();
    if !(a <= T::one()) {
        return Err(domain_err("c", c, "[-1, 1]"));
    }
    Ok(fh_abs(a, theta))
}

/// `F'(c) = theta atanh(c)`.
pub fn flory_huggins_prime<T: Real>(c: T, theta: T) -> Result<T> {
    let a = c.abs();
    if !(a < T::one()) {
        return Err(domain_err("c", c, "(-1, 1)"));
    }
    let v = fh_prime_abs(a, theta);
    Ok(if c < T::zero() { -v } else { v })
}

/// `F''(c) = theta / (1 - c^2)`.
pub fn flory_huggins_second<T: Real>(c: T, theta: T) -> Result<T> {
    let a = c.abs();
    if !(a < T::one()) {
        return Err(domain_err("c", c, "(-1, 1)"));
    }
    Ok(fh_second_abs(a, theta))
}

/// `rho f_e(rho)` in the normalization `rho^gamma / (gamma - 1)`.
pub fn elastic_energy<T: Real>(rho: T, gamma: T) -> Result<T> {
    if !(rho >= T::zero()) {
        return Err(domain_err("rho", rho, "[0, inf)"));
    }
    Ok(rho.powf(gamma) / (gamma - T::one()))
}

/// `f_e(rho) = int_1^rho z^gamma / z^2 dz = (rho^(gamma-1) - 1) / (gamma - 1)`.
///
/// `rho f_e(rho)` differs from [`elastic_energy`] by the mass term
/// `-rho/(gamma-1)`, which is constant along any mass-conserving evolution.
pub fn elastic_free_energy<T: Real>(rho: T, gamma: T) -> Result<T> {
    if !(rho > T::zero()) {
        return Err(domain_err("rho", rho, "(0, inf)"));
    }
    Ok((rho.powf(gamma - T::one()) - T::one()) / (gamma - T::one()))
}

/// Enthalpy `d/drho [rho^gamma/(gamma-1)] = gamma rho^(gamma-1) / (gamma-1)`.
#[inline]
pub fn enthalpy<T: Real>(rho: T, gamma: T) -> T {
    if rho <= T::zero() {
        return T::zero();
    }
    gamma * rho.powf(gamma - T::one()) / (gamma - T::one())
}

/// Explicit constants in the growth bounds of `G_eps = F'_eps - theta0 c`:
///
/// * `G_eps'(c) <= upper (1 + |c|)`
/// * `sign(c) G_eps(c) >= lower_slope |c| - lower_offset`
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GBounds<T> {
    pub upper: T,
    pub lower_slope: T,
    pub lower_offset: T,
}

/// `F` with its tails beyond `+-(1 - eps)` replaced by second-order Taylor polynomials.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegularizedPotential<T> {
    params: PotentialParams<T>,
    eps: T,
    seam: T,
    f_seam: T,
    fp_seam: T,
    fpp_seam: T,
}

impl<T: Real> RegularizedPotential<T> {
    pub fn new(params: PotentialParams<T>, eps: T) -> Result<Self> {
        params.validate()?;
        if !(eps > T::zero() && eps < T::lit(0.5)) {
            return Err(Error::InvalidParameter(format!(
                "regularization level must lie in (0, 1/2) (eps = {eps})"
            )));
        }
        let seam = T::one() - eps;
        let theta = params.theta;
        Ok(Self {
            params,
            eps,
            seam,
            f_seam: fh_abs(seam, theta),
            fp_seam: fh_prime_abs(seam, theta),
            fpp_seam: fh_second_abs(seam, theta),
        })
    }

    #[inline]
    pub fn params(&self) -> &PotentialParams<T> {
        &self.params
    }

    #[inline]
    pub fn eps(&self) -> T {
        self.eps
    }

    /// Seam location `1 - eps`.
    #[inline]
    pub fn seam(&self) -> T {
        self.seam
    }

    /// `F''(1 - eps)`, the constant curvature of the tails.
    #[inline]
    pub fn seam_curvature(&self) -> T {
        self.fpp_seam
    }

    /// `F_eps(c)`.
    #[inline]
    pub fn value(&self, c: T) -> T {
        let a = c.abs();
        if a <= self.seam {
            fh_abs(a, self.params.theta)
        } else {
            let d = a - self.seam;
            self.f_seam + d * self.fp_seam + T::lit(0.5) * d * d * self.fpp_seam
        }
    }

    /// `F'_eps(c)`.
    #[inline]
    pub fn prime(&self, c: T) -> T {
        let a = c.abs();
        let v = if a <= self.seam {
            fh_prime_abs(a, self.params.theta)
        } else {
            self.fp_seam + (a - self.seam) * self.fpp_seam
        };
        if c < T::zero() {
            -v
        } else {
            v
        }
    }

    /// `F''_eps(c)`.
    #[inline]
    pub fn second(&self, c: T) -> T {
        let a = c.abs();
        if a <= self.seam {
            fh_second_abs(a, self.params.theta)
        } else {
            self.fpp_seam
        }
    }

    /// `f_mix,eps(c) = F_eps(c) - theta0 c^2 / 2`.
    #[inline]
    pub fn mixing(&self, c: T) -> T {
        self.value(c) - T::lit(0.5) * self.params.theta0 * c * c
    }

    /// `G_eps(c) = F'_eps(c) - theta0 c`.
    #[inline]
    pub fn g_eps(&self, c: T) -> T {
        self.prime(c) - self.params.theta0 * c
    }

    /// `G_eps'(c) = F''_eps(c) - theta0`.
    #[inline]
    pub fn g_eps_prime(&self, c: T) -> T {
        self.second(c) - self.params.theta0
    }

    /// Candidate constants for the growth bounds of `G_eps`.
    ///
    /// The lower bound has a positive slope only when `F''(1-eps) > theta0`.
    pub fn g_bounds(&self) -> GBounds<T> {
        GBounds {
            upper: self.fpp_seam,
            lower_slope: self.fpp_seam - self.params.theta0,
            lower_offset: self.fpp_seam * self.seam,
        }
    }
}

/// Free-function form of [`RegularizedPotential::value`].
pub fn reg_potential<T: Real>(c: T, reg: &RegularizedPotential<T>) -> T {
    reg.value(c)
}

pub fn reg_prime<T: Real>(c: T, reg: &RegularizedPotential<T>) -> T {
    reg.prime(c)
}

pub fn reg_second<T: Real>(c: T, reg: &RegularizedPotential<T>) -> T {
    reg.second(c)
}

/// `G_eps'(c)`; the `theta0` stored in `reg` is used.
pub fn g_eps_prime<T: Real>(c: T, reg: &RegularizedPotential<T>) -> T {
    reg.g_eps_prime(c)
}

/// One line of the [`verify`] table.
#[derive(Debug, Clone)]
pub struct CheckRow {
    pub name: &'static str,
    pub passed: bool,
    /// Worst observed value of the checked quantity.
    pub worst: f64,
    pub bound: f64,
    pub detail: String,
}

/// Samples of `(-1, 1)` used by the envelope check.
pub const ENVELOPE_SAMPLES: usize = 10_000;

/// Relative tolerance for one-sided limits at the seam.
pub const SEAM_TOL: f64 = 1e-8;

/// Audits every structural property of `F_eps` for one parameter set.
///
/// Computed in `f64`; the table is independent of the scalar type used by
/// simulations.
pub fn verify(theta: f64, theta0: f64, eps: f64) -> Result<Vec<CheckRow>> {
    // gamma is irrelevant here; any admissible value will do
    let params = PotentialParams::new(theta, theta0, 2.0)?;
    let reg = RegularizedPotential::new(params, eps)?;
    let s = reg.seam();
    let f = |c: f64| fh_abs(c.abs(), theta);
    let fp = |c: f64| flory_huggins_prime(c, theta).unwrap();
    let fpp = |c: f64| fh_second_abs(c.abs(), theta);
    let mut rows = Vec::new();

    // one-sided limits at +-s by cubic extrapolation from each side
    {
        let mut worst: f64 = 0.0;
        let fns: [(&str, &dyn Fn(f64) -> f64); 3] = [
            ("value", &|c| reg.value(c)),
            ("first", &|c| reg.prime(c)),
            ("second", &|c| reg.second(c)),
        ];
        let mut detail = String::new();
        for (name, g) in fns {
            let mut best = f64::INFINITY;
            for k in [1e-3, 3e-4, 1e-4] {
                let d = k * eps;
                let mut w: f64 = 0.0;
                for side in [1.0, -1.0] {
                    let x = side * s;
                    let lo = 3.0 * g(x - d) - 3.0 * g(x - 2.0 * d) + g(x - 3.0 * d);
                    let hi = 3.0 * g(x + d) - 3.0 * g(x + 2.0 * d) + g(x + 3.0 * d);
                    let scale = lo.abs().max(hi.abs()).max(f64::MIN_POSITIVE);
                    w = w.max((lo - hi).abs() / scale);
                }
                best = best.min(w);
            }
            detail.push_str(&format!("{name}={best:.1e} "));
            worst = worst.max(best);
        }
        rows.push(CheckRow {
            name: "seam one-sided limits (C2)",
            passed: worst <= SEAM_TOL,
            worst,
            bound: SEAM_TOL,
            detail: detail.trim_end().to_string(),
        });
    }

    // distance to the seam Taylor polynomial is O(delta^3)
    {
        let taylor = |x: f64, d: f64| {
            reg.value(x) + d * reg.prime(x).abs() + 0.5 * d * d * reg.second(x)
        };
        let mut worst: f64 = 0.0;
        let mut ok = true;
        for k in [1e-1, 1e-2, 1e-3] {
            let d = k * eps;
            for x in [s, -s] {
                for dd in [d, -d] {
                    let y = x + x.signum() * dd;
                    let err = (reg.value(y) - taylor(x, dd)).abs();
                    // inner side: remainder bounded by max |F'''| on [s-d, s] / 6
                    let c3 = fh_third_abs(s, theta) / 6.0;
                    let round = 64.0 * f64::EPSILON * reg.value(y).abs().max(1.0);
                    let bound = c3 * d.abs().powi(3) * 1.01 + round;
                    worst = worst.max(err / bound);
                    ok &= err <= bound;
                }
            }
        }
        rows.push(CheckRow {
            name: "seam Taylor remainder O(d^3)",
            passed: ok,
            worst,
            bound: 1.0,
            detail: "error / (|F'''(s)| d^3 / 6)".into(),
        });
    }

    // parity: bitwise even/odd on a symmetric sample of [-3, 3]
    {
        let n = 4001;
        let mut bad = 0usize;
        for i in 0..n {
            let c = -3.0 + 6.0 * i as f64 / (n - 1) as f64;
            bad += (reg.value(c) != reg.value(-c)) as usize;
            bad += (reg.prime(c) != -reg.prime(-c)) as usize;
            bad += (reg.second(c) != reg.second(-c)) as usize;
        }
        rows.push(CheckRow {
            name: "parity (F_eps even, F'_eps odd)",
            passed: bad == 0,
            worst: bad as f64,
            bound: 0.0,
            detail: format!("{bad} mismatches"),
        });
    }

    // strict monotonicity of F'_eps
    {
        let n = 10_001;
        let mut bad = 0usize;
        let mut prev = reg.prime(-3.0);
        for i in 1..n {
            let c = -3.0 + 6.0 * i as f64 / (n - 1) as f64;
            let v = reg.prime(c);
            bad += (v <= prev) as usize;
            prev = v;
        }
        rows.push(CheckRow {
            name: "F'_eps strictly increasing",
            passed: bad == 0,
            worst: bad as f64,
            bound: 0.0,
            detail: format!("{bad} non-increasing pairs"),
        });
    }

    // envelope on open-interval samples
    {
        let n = ENVELOPE_SAMPLES;
        let mut worst_v: f64 = f64::NEG_INFINITY;
        let mut worst_p: f64 = f64::NEG_INFINITY;
        for i in 0..n {
            let c = -1.0 + 2.0 * (i as f64 + 0.5) / n as f64;
            worst_v = worst_v.max(reg.value(c) - f(c));
            worst_p = worst_p.max(reg.prime(c).abs() - fp(c).abs());
        }
        let worst = worst_v.max(worst_p);
        rows.push(CheckRow {
            name: "envelope F_eps <= F, |F'_eps| <= |F'|",
            passed: worst <= 0.0,
            worst,
            bound: 0.0,
            detail: format!("max(F_eps - F) = {worst_v:.2e}, max(|F'_eps| - |F'|) = {worst_p:.2e}"),
        });
    }

    // convexity
    {
        let n = 10_001;
        let mut worst = f64::INFINITY;
        for i in 0..n {
            let c = -3.0 + 6.0 * i as f64 / (n - 1) as f64;
            worst = worst.min(reg.second(c) - theta);
        }
        rows.push(CheckRow {
            name: "F''_eps >= theta",
            passed: worst >= 0.0,
            worst,
            bound: 0.0,
            detail: format!("min(F''_eps - theta) = {worst:.3e}"),
        });
    }

    // central differences against F'_eps away from the seams
    {
        let h = 1e-4 * eps.min(0.1);
        let n = 4001;
        let mut worst: f64 = 0.0;
        for i in 0..n {
            let c = -2.0 + 4.0 * i as f64 / (n - 1) as f64;
            if (c.abs() - s).abs() < 2.0 * h {
                continue;
            }
            let fd = (reg.value(c + h) - reg.value(c - h)) / (2.0 * h);
            let a = (c.abs() + h).min(s);
            let c3 = if c.abs() - h < s { fh_third_abs(a, theta) } else { 0.0 };
            let bound = c3 * h * h / 6.0 * 1.01 + 8.0 * f64::EPSILON * reg.value(c).abs().max(1.0) / h;
            let err = (fd - reg.prime(c)).abs();
            worst = worst.max(err / bound);
        }
        rows.push(CheckRow {
            name: "finite differences match F'_eps (O(h^2))",
            passed: worst <= 1.0,
            worst,
            bound: 1.0,
            detail: format!("h = {h:.1e}, error / (h^2 |F'''|/6 + roundoff)"),
        });
    }

    // growth bounds of G_eps with explicit constants
    {
        let b = reg.g_bounds();
        let n = 20_001;
        let mut up: f64 = f64::NEG_INFINITY;
        let mut lo: f64 = f64::NEG_INFINITY;
        for i in 0..n {
            let c = -10.0 + 20.0 * i as f64 / (n - 1) as f64;
            up = up.max(reg.g_eps_prime(c) - b.upper * (1.0 + c.abs()));
            lo = lo.max(b.lower_slope * c.abs() - b.lower_offset - c.signum() * reg.g_eps(c));
        }
        rows.push(CheckRow {
            name: "G_eps' <= Gbar (1+|c|)",
            passed: up <= 0.0,
            worst: up,
            bound: 0.0,
            detail: format!("Gbar = F''(1-eps) = {:.6e}", b.upper),
        });
        let slope_ok = b.lower_slope > 0.0;
        rows.push(CheckRow {
            name: "sign(c) G_eps >= G1 |c| - G2",
            passed: slope_ok && lo <= 64.0 * f64::EPSILON * b.lower_offset,
            worst: lo,
            bound: 0.0,
            detail: format!(
                "G1 = F''(1-eps) - theta0 = {:.6e}{}, G2 = F''(1-eps)(1-eps) = {:.6e}",
                b.lower_slope,
                if slope_ok { "" } else { " (not positive: eps too large)" },
                b.lower_offset
            ),
        });
    }

    let _ = fpp;
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn reg(theta: f64, theta0: f64, eps: f64) -> RegularizedPotential<f64> {
        RegularizedPotential::new(PotentialParams::new(theta, theta0, 2.0).unwrap(), eps).unwrap()
    }

    #[test]
    fn closed_form_values() {
        assert_eq!(flory_huggins(0.0, 1.0).unwrap(), 0.0);
        assert_relative_eq!(flory_huggins(0.5, 1.0).unwrap(), 0.130_812_035_941_137, max_relative = 1e-14);
        assert_relative_eq!(flory_huggins_prime(0.9, 2.0).unwrap(), 19f64.ln(), max_relative = 1e-14);
        assert_eq!(flory_huggins_second(0.0, 1.5).unwrap(), 1.5);
        assert_eq!(flory_huggins(1.0, 1.0).unwrap(), 2f64.ln());
        assert!(flory_huggins(1.0 + 1e-12, 1.0).is_err());
        assert!(flory_huggins_prime(1.0, 1.0).is_err());
        assert!(flory_huggins_second(-1.0, 1.0).is_err());
    }

    #[test]
    fn tail_value_at_one() {
        let r = reg(2.0, 3.0, 0.1);
        assert_relative_eq!(r.value(1.0), 1.336_339_4, epsilon = 5e-8);
        assert_eq!(r.value(0.3), flory_huggins(0.3, 2.0).unwrap());
        assert_eq!(r.second(1.7), r.seam_curvature());
    }

    #[test]
    fn g_eps_prime_at_origin() {
        let r = reg(1.0, 2.0, 0.1);
        assert_eq!(r.g_eps_prime(0.0), -1.0);
        assert_eq!(r.g_eps_prime(5.0), r.seam_curvature() - 2.0);
    }

    #[test]
    fn elastic_closed_forms() {
        assert_eq!(elastic_energy(0.0, 2.0).unwrap(), 0.0);
        assert_eq!(elastic_energy(1.0, 2.0).unwrap(), 1.0);
        assert_relative_eq!(elastic_energy(2.0, 5.0 / 3.0).unwrap(), 4.762_203_2, epsilon = 5e-8);
        assert!(elastic_energy(-1e-9, 2.0).is_err());
    }

    #[test]
    fn parameter_constraints() {
        assert!(PotentialParams::new(2.0, 1.0, 2.0).is_err());
        assert!(PotentialParams::new(1.0, 2.0, 1.5).is_err());
        assert!(RegularizedPotential::new(PotentialParams::new(1.0, 2.0, 2.0).unwrap(), 0.5).is_err());
    }

    #[test]
    fn verify_table_passes_on_reference_sets() {
        for (t, t0, e) in [(1.0, 2.0, 1e-1), (1.0, 2.0, 1e-3), (0.5, 1.0, 1e-2)] {
            for row in verify(t, t0, e).unwrap() {
                assert!(row.passed, "({t},{t0},{e}) {}: {} {}", row.name, row.worst, row.detail);
            }
        }
    }

    #[test]
    fn single_precision_evaluates() {
        let r = RegularizedPotential::new(PotentialParams::new(1.0f32, 2.0, 2.0).unwrap(), 0.1).unwrap();
        assert!((r.prime(0.5f32) - 0.5f32.atanh()).abs() < 1e-6);
    }
}
