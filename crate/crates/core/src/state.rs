//! Simulation state, initial data presets and the admissibility validator.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::constitutive::{energy_density, Entropy};
use crate::error::{Error, Result};
use crate::grid::{face_average, laplacian_neumann, Grid, ScalarBc, ScalarField, VectorField};
use crate::potential::{PotentialParams, RegularizedPotential};
use crate::real::Real;

/// Fields at one time level. Velocity is stored on faces; momentum is
/// `rho_f u` with `rho_f` the average of the two adjacent cells.
#[derive(Debug, Clone, PartialEq)]
pub struct State<T> {
    pub rho: ScalarField<T>,
    pub u: VectorField<T>,
    pub c: ScalarField<T>,
    pub mu: ScalarField<T>,
    pub time: T,
    pub eps: T,
}

impl<T: Real> State<T> {
    pub fn grid(&self) -> &Grid<T> {
        self.rho.grid()
    }

    pub fn momentum(&self) -> VectorField<T> {
        let mut m = face_average(&self.rho);
        for axis in 0..self.grid().dim() {
            for (mf, uf) in m.comp_mut(axis).iter_mut().zip(self.u.comp(axis)) {
                *mf *= *uf;
            }
        }
        m
    }

    /// `sum rho vol`.
    pub fn mass(&self) -> T {
        self.rho.integral()
    }

    /// `sum rho c vol`.
    pub fn concentration_mass(&self) -> T {
        self.rho.inner(&self.c).expect("state fields share a grid")
    }

    /// Cells whose density is at or below `threshold`.
    pub fn vacuum_cells(&self, threshold: T) -> Vec<usize> {
        self.rho
            .values()
            .iter()
            .enumerate()
            .filter(|(_, &r)| r <= threshold)
            .map(|(k, _)| k)
            .collect()
    }

    pub fn check_consistent(&self) -> Result<()> {
        let g = self.grid();
        if self.u.grid() != g || self.c.grid() != g || self.mu.grid() != g {
            return Err(Error::GridMismatch);
        }
        if let Some((cell, &v)) = self.rho.values().iter().enumerate().find(|(_, &r)| r < T::zero()) {
            return Err(Error::NegativeDensity {
                cell,
                value: v.to_f64_lossy(),
            });
        }
        Ok(())
    }
}

/// Raw initial data `(rho0, m0, c0)` on one grid.
#[derive(Debug, Clone, PartialEq)]
pub struct InitialData<T> {
    pub rho0: ScalarField<T>,
    /// Face momentum `rho_f u`.
    pub m0: VectorField<T>,
    pub c0: ScalarField<T>,
}

impl<T: Real> InitialData<T> {
    pub fn new(rho0: ScalarField<T>, m0: VectorField<T>, c0: ScalarField<T>) -> Result<Self> {
        if rho0.grid() != m0.grid() || rho0.grid() != c0.grid() {
            return Err(Error::GridMismatch);
        }
        Ok(Self {
            rho0: rho0.with_bc(ScalarBc::NeumannZero),
            m0,
            c0: c0.with_bc(ScalarBc::NeumannZero),
        })
    }

    /// Builds `m0 = rho_f u0`.
    pub fn from_velocity(rho0: ScalarField<T>, u0: &VectorField<T>, c0: ScalarField<T>) -> Result<Self> {
        if rho0.grid() != u0.grid() {
            return Err(Error::GridMismatch);
        }
        let mut m = face_average(&rho0);
        for axis in 0..rho0.grid().dim() {
            for (mf, uf) in m.comp_mut(axis).iter_mut().zip(u0.comp(axis)) {
                *mf *= *uf;
            }
        }
        Self::new(rho0, m, c0)
    }

    pub fn grid(&self) -> &Grid<T> {
        self.rho0.grid()
    }
}

/// A failed hypothesis on the initial data or the physical constants.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    /// `gamma > 3/2` fails.
    AdiabaticExponent { gamma: f64 },
    /// `0 < theta < theta0` fails.
    Thermodynamic { theta: f64, theta0: f64 },
    NegativeDensity { cell: usize, value: f64 },
    ConcentrationRange { cell: usize, value: f64 },
    /// Total mass is not positive.
    NonPositiveMass { mass: f64 },
    /// `M_r = M_c / M` outside `(-1, 1)`.
    MeanConstraint { m_r: f64 },
    /// Nonzero momentum on a vacuum face makes the kinetic energy infinite.
    MomentumOnVacuum { axis: usize, face: usize, momentum: f64 },
    /// Some energy term is not finite.
    InfiniteEnergy { term: &'static str },
}

impl Violation {
    /// Short stable identifier of the violated condition.
    pub fn code(&self) -> &'static str {
        match self {
            Violation::AdiabaticExponent { .. } => "adiabatic-exponent",
            Violation::Thermodynamic { .. } => "thermodynamic-condition",
            Violation::NegativeDensity { .. } => "nonnegative-density",
            Violation::ConcentrationRange { .. } => "concentration-range",
            Violation::NonPositiveMass { .. } => "positive-mass",
            Violation::MeanConstraint { .. } => "mean-constraint",
            Violation::MomentumOnVacuum { .. } | Violation::InfiniteEnergy { .. } => "finite-initial-energy",
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::AdiabaticExponent { gamma } => {
                write!(f, "[adiabatic-exponent] gamma = {gamma} violates gamma > 3/2")
            }
            Violation::Thermodynamic { theta, theta0 } => write!(
                f,
                "[thermodynamic-condition] theta = {theta}, theta0 = {theta0} violate 0 < theta < theta0"
            ),
            Violation::NegativeDensity { cell, value } => {
                write!(f, "[nonnegative-density] rho0 = {value} < 0 in cell {cell}")
            }
            Violation::ConcentrationRange { cell, value } => {
                write!(f, "[concentration-range] c0 = {value} outside [-1, 1] in cell {cell}")
            }
            Violation::NonPositiveMass { mass } => write!(f, "[positive-mass] total mass M = {mass} must be > 0"),
            Violation::MeanConstraint { m_r } => write!(
                f,
                "[mean-constraint] M_r = M_c/M = {m_r} must lie in (-1, 1); |M_r| = 1 means only one fluid is present"
            ),
            Violation::MomentumOnVacuum { axis, face, momentum } => write!(
                f,
                "[finite-initial-energy] momentum {momentum} on vacuum face {face} (axis {axis}) gives infinite kinetic energy"
            ),
            Violation::InfiniteEnergy { term } => {
                write!(f, "[finite-initial-energy] initial {term} energy is infinite")
            }
        }
    }
}

/// Initial data that passed every hypothesis, with its derived constants.
#[derive(Debug, Clone)]
pub struct AdmissibleInitialData<T> {
    pub data: InitialData<T>,
    /// Face velocity `m0 / rho_f` (zero on vacuum faces).
    pub u0: VectorField<T>,
    /// `M = int rho0`.
    pub mass: T,
    /// `M_c = int rho0 c0`.
    pub mass_c: T,
    /// `M_r = M_c / M`.
    pub m_r: T,
    /// Initial energy with the unregularized entropy.
    pub e0: T,
}

/// Checks every hypothesis and returns all violations found, not just the first.
pub fn validate_initial_data<T: Real>(
    data: &InitialData<T>,
    params: &PotentialParams<T>,
) -> std::result::Result<AdmissibleInitialData<T>, Vec<Violation>> {
    let mut v = Vec::new();
    if !(params.gamma > T::lit(1.5)) {
        v.push(Violation::AdiabaticExponent {
            gamma: params.gamma.to_f64_lossy(),
        });
    }
    if !(params.theta > T::zero() && params.theta < params.theta0) {
        v.push(Violation::Thermodynamic {
            theta: params.theta.to_f64_lossy(),
            theta0: params.theta0.to_f64_lossy(),
        });
    }
    let g = *data.grid();
    let vol = g.cell_volume();
    let mut neg = false;
    for (cell, &r) in data.rho0.values().iter().enumerate() {
        if r < T::zero() {
            neg = true;
            v.push(Violation::NegativeDensity {
                cell,
                value: r.to_f64_lossy(),
            });
        }
    }
    let mut out_of_range = false;
    for (cell, &c) in data.c0.values().iter().enumerate() {
        if c.abs() > T::one() {
            out_of_range = true;
            v.push(Violation::ConcentrationRange {
                cell,
                value: c.to_f64_lossy(),
            });
        }
    }
    let mass = data.rho0.integral();
    let mass_c = data.rho0.inner(&data.c0).expect("same grid");
    let mut m_r = T::zero();
    if !(mass > T::zero()) {
        v.push(Violation::NonPositiveMass {
            mass: mass.to_f64_lossy(),
        });
    } else {
        m_r = mass_c / mass;
        if !(m_r.abs() < T::one()) {
            v.push(Violation::MeanConstraint { m_r: m_r.to_f64_lossy() });
        }
    }

    // kinetic energy from face momentum, with 0/0 := 0
    let rho_f = face_average(&data.rho0);
    let mut u0 = VectorField::zeros(g);
    let mut kinetic = T::zero();
    for axis in 0..g.dim() {
        for (face, (&m, &r)) in data.m0.comp(axis).iter().zip(rho_f.comp(axis)).enumerate() {
            if r > T::zero() {
                u0.comp_mut(axis)[face] = m / r;
                kinetic += T::lit(0.5) * m * m / r;
            } else if m != T::zero() {
                v.push(Violation::MomentumOnVacuum {
                    axis,
                    face,
                    momentum: m.to_f64_lossy(),
                });
            }
        }
    }
    kinetic *= vol;

    let mut e0 = T::infinity();
    if !neg && !out_of_range {
        // with |c0| <= 1 and rho0 >= 0 the entropy is finite
        let zero_u = VectorField::zeros(g);
        match energy_density(&data.rho0, &zero_u, &data.c0, params, Entropy::Exact) {
            Ok(e) => {
                let rest = e.integral(vol);
                if !rest.is_finite() {
                    v.push(Violation::InfiniteEnergy { term: "free" });
                }
                e0 = rest + kinetic;
            }
            Err(_) => v.push(Violation::InfiniteEnergy { term: "free" }),
        }
        if !kinetic.is_finite() {
            v.push(Violation::InfiniteEnergy { term: "kinetic" });
        }
    }

    if v.is_empty() {
        Ok(AdmissibleInitialData {
            data: data.clone(),
            u0,
            mass,
            mass_c,
            m_r,
            e0,
        })
    } else {
        Err(v)
    }
}

/// Chemical potential from the discrete constraint
/// `(rho + delta) mu = -lap c + rho F'_eps(c) - theta0 rho c`.
///
/// `c_explicit` supplies the concave term; at `t = 0` it is `c` itself.
pub fn chemical_potential<T: Real>(
    rho: &ScalarField<T>,
    c: &ScalarField<T>,
    c_explicit: &ScalarField<T>,
    reg: &RegularizedPotential<T>,
    delta_reg: T,
) -> Result<ScalarField<T>> {
    let lap = laplacian_neumann(c)?;
    let theta0 = reg.params().theta0;
    let vals = rho
        .values()
        .iter()
        .zip(c.values())
        .zip(c_explicit.values())
        .zip(lap.values())
        .map(|(((&r, &ck), &ce), &l)| (-l + r * reg.prime(ck) - theta0 * r * ce) / (r + delta_reg))
        .collect();
    ScalarField::new(*rho.grid(), vals, ScalarBc::NeumannZero)
}

/// Assembles the time-zero state; `rho0`, the velocity and `c0` are copied unchanged.
pub fn build_initial_state<T: Real>(
    adm: &AdmissibleInitialData<T>,
    reg: &RegularizedPotential<T>,
    delta_reg: T,
) -> Result<State<T>> {
    if !(delta_reg > T::zero()) {
        return Err(Error::InvalidParameter("delta_reg must be positive".into()));
    }
    let d = &adm.data;
    let mu = chemical_potential(&d.rho0, &d.c0, &d.c0, reg, delta_reg)?;
    Ok(State {
        rho: d.rho0.clone(),
        u: adm.u0.clone(),
        c: d.c0.clone(),
        mu,
        time: T::zero(),
        eps: reg.eps(),
    })
}

/// Named initial-data families.
#[derive(Debug, Clone, PartialEq)]
pub enum Preset {
    /// Constant density and concentration at rest.
    Uniform { rho: f64, c: f64 },
    /// `c0 = M_r + amplitude * noise`, zero-mean seeded noise, `rho0 = rho`.
    Spinodal { rho: f64, m_r: f64, amplitude: f64, seed: u64 },
    /// Circular (2D) or slab (1D) droplet with a tanh profile of width `width`.
    Bubble {
        rho: f64,
        radius: f64,
        width: f64,
        c_inside: f64,
        c_outside: f64,
    },
    /// Uniform density, smooth concentration, shear velocity
    /// `u_x = U sin(pi x / Lx) sin(2 pi y / Ly)`.
    Shear { rho: f64, m_r: f64, amplitude: f64, velocity: f64 },
    /// 1D-friendly smooth data with a moving density bump:
    /// `rho = rho + a cos(pi x/Lx)`, `c = m_r + b cos(pi x/Lx)`, `u = U sin(pi x/Lx)`.
    Advection {
        rho: f64,
        rho_amplitude: f64,
        m_r: f64,
        amplitude: f64,
        velocity: f64,
    },
}

impl Preset {
    pub fn name(&self) -> &'static str {
        match self {
            Preset::Uniform { .. } => "uniform",
            Preset::Spinodal { .. } => "spinodal",
            Preset::Bubble { .. } => "bubble",
            Preset::Shear { .. } => "shear",
            Preset::Advection { .. } => "advection",
        }
    }

    pub fn build<T: Real>(&self, grid: &Grid<T>) -> Result<InitialData<T>> {
        let g = *grid;
        let l = |k: usize| g.lengths()[k.min(g.dim() - 1)].to_f64_lossy();
        let (lx, ly) = (l(0), if g.dim() == 2 { l(1) } else { 1.0 });
        let pi = std::f64::consts::PI;
        let nb = ScalarBc::NeumannZero;
        let field = |f: &dyn Fn(f64, f64) -> f64| {
            ScalarField::from_fn(g, nb, |x, y| T::lit(f(x.to_f64_lossy(), y.to_f64_lossy())))
        };
        let zero_u = VectorField::zeros(g);
        match *self {
            Preset::Uniform { rho, c } => {
                InitialData::new(field(&|_, _| rho), zero_u, field(&|_, _| c))
            }
            Preset::Spinodal {
                rho,
                m_r,
                amplitude,
                seed,
            } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let mut noise: Vec<f64> = (0..g.n_cells()).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let mean = noise.iter().sum::<f64>() / noise.len() as f64;
                noise.iter_mut().for_each(|v| *v -= mean);
                let c: Vec<T> = noise.iter().map(|v| T::lit(m_r + amplitude * v)).collect();
                InitialData::new(field(&|_, _| rho), zero_u, ScalarField::new(g, c, nb)?)
            }
            Preset::Bubble {
                rho,
                radius,
                width,
                c_inside,
                c_outside,
            } => {
                let (cx, cy) = (0.5 * lx, 0.5 * ly);
                let two_d = g.dim() == 2;
                let c = field(&|x, y| {
                    let r = if two_d {
                        ((x - cx).powi(2) + (y - cy).powi(2)).sqrt()
                    } else {
                        (x - cx).abs()
                    };
                    let s = 0.5 * (1.0 - ((r - radius) / (std::f64::consts::SQRT_2 * width)).tanh());
                    c_outside + (c_inside - c_outside) * s
                });
                InitialData::new(field(&|_, _| rho), zero_u, c)
            }
            Preset::Shear {
                rho,
                m_r,
                amplitude,
                velocity,
            } => {
                let two_d = g.dim() == 2;
                let c = field(&|x, y| {
                    let cy = if two_d { (pi * y / ly).cos() } else { 1.0 };
                    m_r + amplitude * (2.0 * pi * x / lx).cos() * cy
                });
                let u = VectorField::from_fn(g, |x, y| {
                    let (x, y) = (x.to_f64_lossy(), y.to_f64_lossy());
                    let sy = if two_d { (2.0 * pi * y / ly).sin() } else { 1.0 };
                    [T::lit(velocity * (pi * x / lx).sin() * sy), T::zero()]
                });
                InitialData::from_velocity(field(&|_, _| rho), &u, c)
            }
            Preset::Advection {
                rho,
                rho_amplitude,
                m_r,
                amplitude,
                velocity,
            } => {
                let r = field(&|x, _| rho + rho_amplitude * (pi * x / lx).cos());
                let c = field(&|x, _| m_r + amplitude * (pi * x / lx).cos());
                let u = VectorField::from_fn(g, |x, _| [T::lit(velocity * (pi * x.to_f64_lossy() / lx).sin()), T::zero()]);
                InitialData::from_velocity(r, &u, c)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> PotentialParams<f64> {
        PotentialParams::new(1.0, 2.0, 2.0).unwrap()
    }

    #[test]
    fn uniform_rest_is_admissible() {
        let g = Grid::new_1d(10, 1.0).unwrap();
        let d = Preset::Uniform { rho: 1.0, c: 0.0 }.build(&g).unwrap();
        let a = validate_initial_data(&d, &params()).unwrap();
        assert_eq!(a.mass, 1.0);
        assert_eq!(a.mass_c, 0.0);
        assert_eq!(a.m_r, 0.0);
        assert!((a.e0 - 1.0).abs() < 1e-15);
    }

    #[test]
    fn pure_phase_is_rejected() {
        let g = Grid::new_1d(10, 1.0).unwrap();
        for c in [1.0, -1.0] {
            let d = Preset::Uniform { rho: 1.0, c }.build(&g).unwrap();
            let v = validate_initial_data(&d, &params()).unwrap_err();
            assert_eq!(v.len(), 1);
            assert_eq!(v[0].code(), "mean-constraint");
        }
    }

    #[test]
    fn momentum_on_vacuum_is_rejected() {
        let g = Grid::new_1d(4, 1.0).unwrap();
        let rho = ScalarField::new(g, vec![1.0, 0.0, 0.0, 1.0], ScalarBc::NeumannZero).unwrap();
        let c = ScalarField::constant(g, 0.0, ScalarBc::NeumannZero);
        let m = VectorField::new(g, vec![0.0, 0.3, 0.0], vec![]).unwrap();
        let d = InitialData::new(rho, m, c).unwrap();
        let v = validate_initial_data(&d, &params()).unwrap_err();
        assert!(v.iter().any(|x| matches!(x, Violation::MomentumOnVacuum { face: 1, .. })));
        assert!(v.iter().all(|x| x.code() == "finite-initial-energy"));
    }

    #[test]
    fn all_violations_are_collected() {
        let g = Grid::new_1d(4, 1.0).unwrap();
        let rho = ScalarField::new(g, vec![-1.0, -1.0, 0.5, 0.0], ScalarBc::NeumannZero).unwrap();
        let c = ScalarField::new(g, vec![0.0, 2.0, 0.0, 0.0], ScalarBc::NeumannZero).unwrap();
        let d = InitialData::new(rho, VectorField::zeros(g), c).unwrap();
        let p = PotentialParams {
            theta: 3.0,
            theta0: 2.0,
            gamma: 1.2,
        };
        let codes: Vec<_> = validate_initial_data(&d, &p).unwrap_err().iter().map(|v| v.code()).collect();
        for want in [
            "adiabatic-exponent",
            "thermodynamic-condition",
            "nonnegative-density",
            "concentration-range",
            "positive-mass",
        ] {
            assert!(codes.contains(&want), "{want} missing from {codes:?}");
        }
    }

    #[test]
    fn uniform_chemical_potential() {
        let g = Grid::new_2d([4, 3], [1.0, 1.0]).unwrap();
        let d = Preset::Uniform { rho: 2.0, c: 0.3 }.build(&g).unwrap();
        let a = validate_initial_data(&d, &params()).unwrap();
        let reg = RegularizedPotential::new(params(), 0.1).unwrap();
        let s = build_initial_state(&a, &reg, 1e-10).unwrap();
        let expect = reg.prime(0.3) - 2.0 * 0.3;
        for &m in s.mu.values() {
            assert!((m - expect).abs() < 1e-9 * expect.abs());
        }
        assert_eq!(s.rho, d.rho0);
        assert_eq!(s.c, d.c0);
    }

    #[test]
    fn spinodal_seed_is_reproducible_and_mean_exact() {
        let g = Grid::new_1d(64, 16.0).unwrap();
        let p = Preset::Spinodal {
            rho: 1.0,
            m_r: 0.1,
            amplitude: 1e-3,
            seed: 7,
        };
        let a = p.build(&g).unwrap();
        let b = p.build(&g).unwrap();
        assert_eq!(a, b);
        let adm = validate_initial_data(&a, &params()).unwrap();
        assert!((adm.m_r - 0.1).abs() < 1e-15);
    }
}
