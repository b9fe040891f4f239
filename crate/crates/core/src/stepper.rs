//! One time step of the coupled system, split as continuity, then phase
//! field, then momentum.
//!
//! The split is arranged so that mass and concentration mass are conserved
//! exactly and the discrete energy obeys a one-step inequality whose defect is
//! second order in `dt` plus solver residual terms:
//!
//! * continuity: explicit donor-cell fluxes `F = rho_up u^n`;
//! * phase field: implicit in `(c, mu)` with the convex entropy implicit and
//!   the concave `-theta0 c^2/2` part explicit, the same donor-cell flux for
//!   `rho c`, solved by Newton;
//! * momentum: explicit donor-cell convection on the dual grid, pressure and
//!   capillary forces in potential form reusing the fluxes of the first two
//!   sub-steps, implicit viscous term.

use crate::constitutive::{energy_density, Entropy, ViscosityProfile, ViscousForm};
use crate::error::{Error, Result};
use crate::grid::{face_average, gradient, laplacian_matrix, Grid, ScalarBc, ScalarField, VectorField};
use crate::linsolve::{bicgstab, newton_solve, CsrMatrix, KrylovConfig, NewtonConfig, TripletBuilder};
use crate::potential::{enthalpy, PotentialParams, RegularizedPotential};
use crate::real::Real;

/// Everything that defines the continuous model.
#[derive(Debug, Clone, Copy)]
pub struct Physics<T> {
    pub params: PotentialParams<T>,
    pub reg: RegularizedPotential<T>,
    pub viscosity: ViscosityProfile<T>,
}

impl<T: Real> Physics<T> {
    pub fn new(params: PotentialParams<T>, eps: T, viscosity: ViscosityProfile<T>) -> Result<Self> {
        Ok(Self {
            params,
            reg: RegularizedPotential::new(params, eps)?,
            viscosity,
        })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct StepConfig<T> {
    pub dt: T,
    /// Bound on `dt * sum_k max|u_k| / h_k`.
    pub cfl_safety: T,
    /// Lift of the density in the chemical-potential equation.
    pub delta_reg: T,
    pub newton: NewtonConfig<T>,
    pub viscous: KrylovConfig<T>,
    /// Abort on an energy-inequality violation instead of flagging it.
    pub strict: bool,
    /// Keep `u = 0` and `rho` fixed: only the phase field evolves.
    pub frozen_velocity: bool,
    /// Safety factor `C` on the calibrated second-order energy defect.
    pub energy_safety: T,
}

impl<T: Real> StepConfig<T> {
    pub fn new(dt: T) -> Self {
        let mut newton = NewtonConfig::default();
        newton.krylov.max_iter = 5000;
        Self {
            dt,
            cfl_safety: T::lit(0.5),
            delta_reg: T::lit(1e-10),
            newton,
            viscous: KrylovConfig {
                max_iter: 5000,
                ..KrylovConfig::default()
            },
            strict: false,
            frozen_velocity: false,
            energy_safety: T::lit(10.0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > T::zero()) || !self.dt.is_finite() {
            return Err(Error::InvalidParameter("dt must be positive".into()));
        }
        if !(self.cfl_safety > T::zero() && self.cfl_safety <= T::one()) {
            return Err(Error::InvalidParameter("cfl_safety must lie in (0, 1]".into()));
        }
        if !(self.delta_reg > T::zero()) {
            return Err(Error::InvalidParameter("delta_reg must be positive".into()));
        }
        if !(self.energy_safety >= T::zero()) {
            return Err(Error::InvalidParameter("energy_safety must be nonnegative".into()));
        }
        self.newton.validate()
    }
}

/// CFL number `dt * sum_k max|u_k| / h_k`.
pub fn cfl_number<T: Real>(u: &VectorField<T>, dt: T) -> T {
    let g = u.grid();
    (0..g.dim()).map(|k| dt * u.max_abs(k) / g.h(k)).sum()
}

/// Output of the continuity sub-step.
#[derive(Debug, Clone)]
pub struct Continuity<T> {
    pub rho: ScalarField<T>,
    /// Donor-cell mass flux `rho_up u` on interior faces.
    pub flux: VectorField<T>,
    /// Donor density used in the flux (cell average where `u = 0`).
    pub rho_up: VectorField<T>,
}

/// Donor-cell update `rho^{n+1} = rho^n - dt div(rho_up u)`.
pub fn step_continuity<T: Real>(rho: &ScalarField<T>, u: &VectorField<T>, dt: T, cfl_safety: T) -> Result<Continuity<T>> {
    let g = *rho.grid();
    if u.grid() != &g {
        return Err(Error::GridMismatch);
    }
    let cfl = cfl_number(u, dt);
    if cfl > cfl_safety {
        let rate = cfl / dt;
        return Err(Error::Cfl {
            cfl: cfl.to_f64_lossy(),
            limit: cfl_safety.to_f64_lossy(),
            proposed_dt: (cfl_safety / rate).to_f64_lossy(),
        });
    }
    let r = rho.values();
    let half = T::lit(0.5);
    let mut flux = VectorField::zeros(g);
    let mut rho_up = VectorField::zeros(g);
    for axis in 0..g.dim() {
        let uc = u.comp(axis);
        for idx in 0..g.n_faces(axis) {
            let (lo, hi) = g.face_cells(axis, idx);
            let v = uc[idx];
            let up = if v > T::zero() {
                r[lo]
            } else if v < T::zero() {
                r[hi]
            } else {
                half * (r[lo] + r[hi])
            };
            rho_up.comp_mut(axis)[idx] = up;
            flux.comp_mut(axis)[idx] = up * v;
        }
    }
    let div = crate::grid::divergence(&flux);
    let mut next = Vec::with_capacity(r.len());
    for (cell, (&rk, &dk)) in r.iter().zip(div.values()).enumerate() {
        let v = rk - dt * dk;
        if v < T::zero() {
            return Err(Error::NegativeDensity {
                cell,
                value: v.to_f64_lossy(),
            });
        }
        next.push(v);
    }
    Ok(Continuity {
        rho: ScalarField::new(g, next, ScalarBc::NeumannZero)?,
        flux,
        rho_up,
    })
}

/// Donor-cell divergence `div(c_up F)` with the donor chosen by the sign of `u`.
fn upwind_divergence<T: Real>(c: &ScalarField<T>, u: &VectorField<T>, flux: &VectorField<T>) -> Vec<T> {
    let g = c.grid();
    let cv = c.values();
    let mut out = vec![T::zero(); g.n_cells()];
    for axis in 0..g.dim() {
        let inv_h = T::one() / g.h(axis);
        let (uc, fc) = (u.comp(axis), flux.comp(axis));
        for idx in 0..g.n_faces(axis) {
            let (lo, hi) = g.face_cells(axis, idx);
            let f = fc[idx];
            if f == T::zero() {
                continue;
            }
            let cu = if uc[idx] > T::zero() { cv[lo] } else { cv[hi] };
            out[lo] += cu * f * inv_h;
            out[hi] -= cu * f * inv_h;
        }
    }
    out
}

/// Frozen data of one implicit phase-field solve.
///
/// The chemical-potential equation is diagonal in `mu`, so `mu` is eliminated
/// and Newton runs on `c` alone:
/// `mu(c) = (rho' F'_eps(c) - theta0 rho' c^n - lap c) / (rho' + delta)`,
/// `R(c) = rho' c - rho c^n + dt div(c_up F) - dt lap mu(c)`.
pub struct PhaseSystem<'a, T> {
    pub lap: &'a CsrMatrix<T>,
    pub rho_new: &'a [T],
    /// `rho^n c^n` per cell.
    pub rho_c_old: Vec<T>,
    /// `div(c_up F)` per cell.
    pub convection: Vec<T>,
    pub c_old: &'a [T],
    pub dt: T,
    pub delta: T,
    pub reg: &'a RegularizedPotential<T>,
}

impl<T: Real> PhaseSystem<'_, T> {
    pub fn n_cells(&self) -> usize {
        self.rho_new.len()
    }

    pub fn mu(&self, c: &[T]) -> Vec<T> {
        let lap_c = self.lap.matvec(c);
        let theta0 = self.reg.params().theta0;
        (0..self.n_cells())
            .map(|k| {
                let rho = self.rho_new[k];
                (rho * self.reg.prime(c[k]) - theta0 * rho * self.c_old[k] - lap_c[k]) / (rho + self.delta)
            })
            .collect()
    }

    /// Residual of the concentration equation for given `(c, mu)`.
    pub fn residual_c(&self, c: &[T], mu: &[T]) -> Vec<T> {
        let lap_mu = self.lap.matvec(mu);
        (0..self.n_cells())
            .map(|k| self.rho_new[k] * c[k] - self.rho_c_old[k] + self.dt * self.convection[k] - self.dt * lap_mu[k])
            .collect()
    }

    /// Residual of the chemical-potential equation for given `(c, mu)`.
    pub fn residual_mu(&self, c: &[T], mu: &[T]) -> Vec<T> {
        let lap_c = self.lap.matvec(c);
        let theta0 = self.reg.params().theta0;
        (0..self.n_cells())
            .map(|k| {
                let rho = self.rho_new[k];
                (rho + self.delta) * mu[k] + lap_c[k] - rho * self.reg.prime(c[k]) + theta0 * rho * self.c_old[k]
            })
            .collect()
    }

    /// Reduced residual `R(c)`.
    pub fn residual(&self, c: &[T]) -> Vec<T> {
        self.residual_c(c, &self.mu(c))
    }

    /// `R'(c) = diag(rho') - dt lap diag(1/(rho'+delta)) (diag(rho' F''_eps) - lap)`.
    pub fn jacobian(&self, c: &[T]) -> Result<CsrMatrix<T>> {
        let n = self.n_cells();
        let mut tb = TripletBuilder::with_capacity(n, n, self.lap.nnz() + n);
        for k in 0..n {
            let rho = self.rho_new[k];
            let inv = T::one() / (rho + self.delta);
            tb.push(k, k, rho * self.reg.second(c[k]) * inv);
            for (j, l) in self.lap.row(k) {
                tb.push(k, j, -l * inv);
            }
        }
        let dmu = tb.build();
        let prod = self.lap.matmul(&dmu)?;
        let mut tb = TripletBuilder::with_capacity(n, n, prod.nnz() + n);
        for k in 0..n {
            tb.push(k, k, self.rho_new[k]);
            for (j, v) in prod.row(k) {
                tb.push(k, j, -self.dt * v);
            }
        }
        Ok(tb.build())
    }
}

/// Output of the phase-field sub-step.
#[derive(Debug, Clone)]
pub struct Phase<T> {
    pub c: ScalarField<T>,
    pub mu: ScalarField<T>,
    pub newton_iterations: usize,
    pub krylov_iterations: usize,
    /// Residual of the concentration equation at the returned iterate.
    pub residual_c: Vec<T>,
    /// Residual of the chemical-potential equation at the returned iterate.
    pub residual_mu: Vec<T>,
}

impl<T: Real> Phase<T> {
    pub fn residual_inf(&self) -> T {
        crate::real::norm_inf(&self.residual_c).max(crate::real::norm_inf(&self.residual_mu))
    }
}

/// Implicit phase-field update. The concentration mass `sum rho c vol` is
/// restored exactly after Newton by a uniform shift of `c`, and `mu` is then
/// recomputed so that the chemical-potential equation holds to roundoff.
#[allow(clippy::too_many_arguments)]
pub fn step_phase<T: Real>(
    lap: &CsrMatrix<T>,
    rho_new: &ScalarField<T>,
    rho_old: &ScalarField<T>,
    u_old: &VectorField<T>,
    flux: &VectorField<T>,
    c_old: &ScalarField<T>,
    dt: T,
    reg: &RegularizedPotential<T>,
    delta: T,
    newton: &NewtonConfig<T>,
) -> Result<Phase<T>> {
    let g = *rho_new.grid();
    let sys = PhaseSystem {
        lap,
        rho_new: rho_new.values(),
        rho_c_old: rho_old.values().iter().zip(c_old.values()).map(|(&r, &c)| r * c).collect(),
        convection: upwind_divergence(c_old, u_old, flux),
        c_old: c_old.values(),
        dt,
        delta,
        reg,
    };
    let rep = newton_solve(|c| Ok(sys.residual(c)), |c| sys.jacobian(c), c_old.values(), newton)?;
    let mut c = rep.x;

    let vol = g.cell_volume();
    let target: T = sys.rho_c_old.iter().copied().sum::<T>() * vol;
    let mass: T = sys.rho_new.iter().copied().sum::<T>() * vol;
    if mass > T::zero() {
        let have: T = sys.rho_new.iter().zip(&c).map(|(&r, &ck)| r * ck).sum::<T>() * vol;
        let shift = (target - have) / mass;
        c.iter_mut().for_each(|v| *v += shift);
    }
    let mu = sys.mu(&c);
    let residual_c = sys.residual_c(&c, &mu);
    let residual_mu = sys.residual_mu(&c, &mu);
    Ok(Phase {
        c: ScalarField::new(g, c, ScalarBc::NeumannZero)?,
        mu: ScalarField::new(g, mu, ScalarBc::NeumannZero)?,
        newton_iterations: rep.iterations,
        krylov_iterations: rep.krylov_iterations,
        residual_c,
        residual_mu,
    })
}

/// Dual-grid mass fluxes for the momentum of each axis.
///
/// For axis-`a` momentum the dual cell of a face spans the two adjacent
/// primal cells' halves; its faces normal to `a` sit at cell centers and carry
/// the mean of the two primal `a`-fluxes of that cell, its faces normal to the
/// other axis sit at corners and carry the mean of the two primal fluxes
/// beside the corner. With these, `rho_f^{n+1} - rho_f^n + dt div_dual G = 0`.
fn dual_convection<T: Real>(u: &VectorField<T>, flux: &VectorField<T>) -> VectorField<T> {
    let g = *u.grid();
    let (nx, ny) = (g.nx(), g.ny());
    let half = T::lit(0.5);
    let mut out = VectorField::zeros(g);
    let fx = |i_face: usize, j: usize| -> T {
        if i_face == 0 || i_face == nx {
            T::zero()
        } else {
            flux.comp(0)[g.x_face(i_face, j)]
        }
    };
    let fy = |i: usize, j_face: usize| -> T {
        if g.dim() < 2 || j_face == 0 || j_face == ny {
            T::zero()
        } else {
            flux.comp(1)[g.y_face(i, j_face)]
        }
    };
    let (ihx, ihy) = (T::one() / g.h(0), if g.dim() == 2 { T::one() / g.h(1) } else { T::zero() });

    // x-momentum
    {
        let mut acc = vec![T::zero(); g.n_faces(0)];
        // dual faces at cell centers
        for j in 0..ny {
            for i in 0..nx {
                let gflux = half * (fx(i, j) + fx(i + 1, j));
                let uu = if gflux > T::zero() { u.x_at(i, j) } else { u.x_at(i + 1, j) };
                let q = gflux * uu * ihx;
                if i > 0 {
                    acc[g.x_face(i, j)] += q;
                }
                if i + 1 < nx {
                    acc[g.x_face(i + 1, j)] -= q;
                }
            }
        }
        // dual faces at interior corners
        if g.dim() == 2 {
            for jc in 1..ny {
                for ic in 1..nx {
                    let gflux = half * (fy(ic - 1, jc) + fy(ic, jc));
                    let uu = if gflux > T::zero() { u.x_at(ic, jc - 1) } else { u.x_at(ic, jc) };
                    let q = gflux * uu * ihy;
                    acc[g.x_face(ic, jc - 1)] += q;
                    acc[g.x_face(ic, jc)] -= q;
                }
            }
        }
        out.comp_mut(0).copy_from_slice(&acc);
    }
    if g.dim() == 2 {
        let mut acc = vec![T::zero(); g.n_faces(1)];
        for j in 0..ny {
            for i in 0..nx {
                let gflux = half * (fy(i, j) + fy(i, j + 1));
                let uu = if gflux > T::zero() { u.y_at(i, j) } else { u.y_at(i, j + 1) };
                let q = gflux * uu * ihy;
                if j > 0 {
                    acc[g.y_face(i, j)] += q;
                }
                if j + 1 < ny {
                    acc[g.y_face(i, j + 1)] -= q;
                }
            }
        }
        for jc in 1..ny {
            for ic in 1..nx {
                let gflux = half * (fx(ic, jc - 1) + fx(ic, jc));
                let uu = if gflux > T::zero() { u.y_at(ic - 1, jc) } else { u.y_at(ic, jc) };
                let q = gflux * uu * ihx;
                acc[g.y_face(ic - 1, jc)] += q;
                acc[g.y_face(ic, jc)] -= q;
            }
        }
        out.comp_mut(1).copy_from_slice(&acc);
    }
    out
}

/// Output of the momentum sub-step.
#[derive(Debug, Clone)]
pub struct Momentum<T> {
    pub u: VectorField<T>,
    pub krylov_iterations: usize,
    /// `b - A u` of the viscous solve, flattened (x-faces first).
    pub residual: Vec<T>,
    /// `dt sum vol rho_up Phi (u^n - u^{n+1})`: the only energy term the
    /// splitting does not cancel exactly.
    pub splitting_defect: T,
}

/// Momentum update with the viscous term implicit.
#[allow(clippy::too_many_arguments)]
pub fn step_momentum<T: Real>(
    cont: &Continuity<T>,
    rho_old: &ScalarField<T>,
    u_old: &VectorField<T>,
    c_old: &ScalarField<T>,
    mu_new: &ScalarField<T>,
    dt: T,
    physics: &Physics<T>,
    viscous: &ViscousForm<T>,
    delta: T,
    krylov: &KrylovConfig<T>,
) -> Result<Momentum<T>> {
    let g = *rho_old.grid();
    let vol = g.cell_volume();
    let half = T::lit(0.5);
    let gamma = physics.params.gamma;
    let reg = &physics.reg;
    let rf_old = face_average(rho_old);
    let rf_new = face_average(&cont.rho);
    let conv = dual_convection(u_old, &cont.flux);

    let enth: Vec<T> = cont.rho.values().iter().map(|&r| enthalpy(r, gamma)).collect();
    let fmix: Vec<T> = c_old.values().iter().map(|&c| reg.mixing(c)).collect();
    let cv = c_old.values();
    let mv = mu_new.values();

    let nfx = g.n_faces(0);
    let n = nfx + g.n_faces(1);
    let mut rhs = vec![T::zero(); n];
    let mut diag = vec![T::zero(); n];
    let mut phi_all = vec![T::zero(); n];
    for axis in 0..g.dim() {
        let off = if axis == 0 { 0 } else { nfx };
        let ih = T::one() / g.h(axis);
        let uc = u_old.comp(axis);
        for idx in 0..g.n_faces(axis) {
            let (lo, hi) = g.face_cells(axis, idx);
            let v = uc[idx];
            let mu_down = if v > T::zero() {
                mv[hi]
            } else if v < T::zero() {
                mv[lo]
            } else {
                half * (mv[lo] + mv[hi])
            };
            let phi = (enth[hi] - enth[lo]) * ih + (fmix[hi] - fmix[lo]) * ih - mu_down * (cv[hi] - cv[lo]) * ih;
            let force = -cont.rho_up.comp(axis)[idx] * phi;
            let r0 = rf_old.comp(axis)[idx];
            let r1 = rf_new.comp(axis)[idx];
            rhs[off + idx] = vol * ((r0 * v - dt * conv.comp(axis)[idx]) / dt + force);
            diag[off + idx] = vol * r1.max(delta) / dt;
            phi_all[off + idx] = phi;
        }
    }
    let q = viscous.matrix();
    let mut tb = TripletBuilder::with_capacity(n, n, q.nnz() + n);
    for r in 0..n {
        tb.push(r, r, diag[r]);
        for (c, v) in q.row(r) {
            tb.push(r, c, v);
        }
    }
    let a = tb.build();
    let x0 = u_old.to_flat();
    let rep = bicgstab(&a, &rhs, Some(&x0), krylov)?;
    let ax = a.matvec(&rep.x);
    let residual: Vec<T> = rhs.iter().zip(&ax).map(|(b, y)| *b - *y).collect();
    let u_new = VectorField::from_flat(g, &rep.x)?;

    let mut defect = T::zero();
    let flat_old = u_old.to_flat();
    for axis in 0..g.dim() {
        let off = if axis == 0 { 0 } else { nfx };
        for idx in 0..g.n_faces(axis) {
            let k = off + idx;
            defect += cont.rho_up.comp(axis)[idx] * phi_all[k] * (flat_old[k] - rep.x[k]);
        }
    }
    Ok(Momentum {
        u: u_new,
        krylov_iterations: rep.iterations,
        residual,
        splitting_defect: dt * vol * defect,
    })
}

/// Regularized total energy `E_eps`.
pub fn total_energy<T: Real>(state_rho: &ScalarField<T>, u: &VectorField<T>, c: &ScalarField<T>, physics: &Physics<T>) -> Result<T> {
    let e = energy_density(state_rho, u, c, &physics.params, Entropy::Regularized(&physics.reg))?;
    Ok(e.integral(state_rho.grid().cell_volume()))
}

/// Sum of absolute energy densities times volume; sets the roundoff scale.
fn energy_scale<T: Real>(rho: &ScalarField<T>, u: &VectorField<T>, c: &ScalarField<T>, physics: &Physics<T>) -> Result<T> {
    let e = energy_density(rho, u, c, &physics.params, Entropy::Regularized(&physics.reg))?;
    let s: T = (0..e.kinetic.len())
        .map(|k| e.kinetic[k].abs() + e.elastic[k].abs() + e.mixing[k].abs() + e.gradient[k].abs())
        .sum();
    Ok(s * rho.grid().cell_volume())
}

/// `int |grad mu|^2` as a face sum.
pub fn mu_dissipation<T: Real>(mu: &ScalarField<T>) -> T {
    let gm = gradient(mu);
    gm.inner(&gm).expect("same grid")
}

/// Per-step energy audit `R = E^{n+1} + dt (D_visc + D_mu) - E^n <= tol`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyAudit<T> {
    pub energy_old: T,
    pub energy_new: T,
    /// `int S : grad u` at the new level.
    pub visc_dissipation: T,
    /// `int |grad mu|^2` at the new level.
    pub mu_dissipation: T,
    /// `E^{n+1} + dt (D_visc + D_mu) - E^n`.
    pub defect: T,
    /// Bound from nonlinear and linear solver residuals.
    pub solver_term: T,
    /// Floating point floor.
    pub roundoff_term: T,
    /// Calibrated `C Lambda dt^2`.
    pub splitting_term: T,
    /// Computed `dt sum vol rho_up Phi (u^n - u^{n+1})`, reported only.
    pub splitting_defect: T,
    pub tolerance: T,
    pub ok: bool,
}

/// Solver statistics of one step.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SolverStats<T> {
    pub newton_iterations: usize,
    pub newton_krylov_iterations: usize,
    pub newton_residual: T,
    pub viscous_iterations: usize,
    pub viscous_residual: T,
    pub cfl: T,
}

/// Everything a step produces besides the new state.
#[derive(Debug, Clone)]
pub struct StepReport<T> {
    pub audit: EnergyAudit<T>,
    pub stats: SolverStats<T>,
}

/// Cached operators for one grid and configuration.
#[derive(Debug, Clone)]
pub struct Stepper<T> {
    pub physics: Physics<T>,
    pub cfg: StepConfig<T>,
    /// Calibrated `Lambda`: the second-order energy defect is bounded by
    /// `energy_safety * lambda * dt^2`.
    pub lambda: T,
    lap: CsrMatrix<T>,
    step_index: usize,
}

impl<T: Real> Stepper<T> {
    pub fn new(grid: &Grid<T>, physics: Physics<T>, cfg: StepConfig<T>) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            physics,
            cfg,
            lambda: T::zero(),
            lap: laplacian_matrix(grid),
            step_index: 0,
        })
    }

    pub fn laplacian(&self) -> &CsrMatrix<T> {
        &self.lap
    }

    pub fn steps_taken(&self) -> usize {
        self.step_index
    }

    /// Measures `Lambda` from one trial step of size `dt_cal` (not committed):
    /// `Lambda = max(R - solver - roundoff, |X|) / dt_cal^2` where `X` is the
    /// splitting defect of the trial step.
    pub fn calibrate(&mut self, state: &State<T>, dt_cal: T) -> Result<T> {
        let mut probe = self.clone();
        probe.cfg.dt = dt_cal;
        probe.cfg.strict = false;
        probe.lambda = T::zero();
        let (_, rep) = probe.advance(state)?;
        let a = rep.audit;
        let excess = (a.defect - a.solver_term - a.roundoff_term).max(a.splitting_defect.abs());
        self.lambda = excess / (dt_cal * dt_cal);
        Ok(self.lambda)
    }

    /// One step with the configured `dt`; increments the step counter.
    pub fn step(&mut self, state: &State<T>) -> Result<(State<T>, StepReport<T>)> {
        let out = self.advance(state)?;
        self.step_index += 1;
        if self.cfg.strict && !out.1.audit.ok {
            let a = out.1.audit;
            return Err(Error::EnergyViolation {
                step: self.step_index,
                excess: a.defect.to_f64_lossy(),
                tolerance: a.tolerance.to_f64_lossy(),
            });
        }
        Ok(out)
    }

    fn advance(&self, s: &State<T>) -> Result<(State<T>, StepReport<T>)> {
        s.check_consistent()?;
        let dt = self.cfg.dt;
        let g = *s.grid();
        let vol = g.cell_volume();
        let phys = &self.physics;
        let delta = self.cfg.delta_reg;

        let mut stats = SolverStats {
            cfl: cfl_number(&s.u, dt),
            ..Default::default()
        };
        let cont = if self.cfg.frozen_velocity {
            Continuity {
                rho: s.rho.clone(),
                flux: VectorField::zeros(g),
                rho_up: face_average(&s.rho),
            }
        } else {
            step_continuity(&s.rho, &s.u, dt, self.cfg.cfl_safety)?
        };
        let zero_u;
        let u_for_phase = if self.cfg.frozen_velocity {
            zero_u = VectorField::zeros(g);
            &zero_u
        } else {
            &s.u
        };
        let phase = step_phase(
            &self.lap,
            &cont.rho,
            &s.rho,
            u_for_phase,
            &cont.flux,
            &s.c,
            dt,
            &phys.reg,
            delta,
            &self.cfg.newton,
        )
        .map_err(|e| Error::PhaseStep(Box::new(e)))?;
        stats.newton_iterations = phase.newton_iterations;
        stats.newton_krylov_iterations = phase.krylov_iterations;
        stats.newton_residual = phase.residual_inf();

        let viscous = ViscousForm::new(&phase.c, &phys.viscosity);
        let (u_new, mom_residual, splitting_defect) = if self.cfg.frozen_velocity {
            (VectorField::zeros(g), Vec::new(), T::zero())
        } else {
            let m = step_momentum(&cont, &s.rho, &s.u, &s.c, &phase.mu, dt, phys, &viscous, delta, &self.cfg.viscous)
                .map_err(|e| Error::MomentumStep(Box::new(e)))?;
            stats.viscous_iterations = m.krylov_iterations;
            stats.viscous_residual = crate::real::norm2(&m.residual);
            (m.u, m.residual, m.splitting_defect)
        };

        let u_old = if self.cfg.frozen_velocity { VectorField::zeros(g) } else { s.u.clone() };
        let energy_old = total_energy(&s.rho, &u_old, &s.c, phys)?;
        let energy_new = total_energy(&cont.rho, &u_new, &phase.c, phys)?;
        let d_visc = viscous.dissipation(&u_new);
        let d_mu = mu_dissipation(&phase.mu);
        let defect = energy_new + dt * (d_visc + d_mu) - energy_old;

        // residual pairing: R1 with mu, R2 with (c - c^n), the viscous residual with u
        let mut solver = T::zero();
        for k in 0..g.n_cells() {
            let dc = phase.c.values()[k] - s.c.values()[k];
            let mu = phase.mu.values()[k];
            solver += (mu * phase.residual_c[k]).abs() + (dc * phase.residual_mu[k]).abs() + (delta * mu * dc).abs() * vol;
        }
        if !mom_residual.is_empty() {
            let uf = u_new.to_flat();
            solver += crate::real::dot(&uf, &mom_residual).abs() * dt / vol;
        }
        solver *= vol;
        let scale = energy_scale(&s.rho, &u_old, &s.c, phys)? + energy_scale(&cont.rho, &u_new, &phase.c, phys)?
            + dt * (d_visc + d_mu);
        let roundoff = T::epsilon() * T::from_usize_lossy(g.n_cells() + 16) * scale;
        let splitting = if self.cfg.frozen_velocity {
            T::zero()
        } else {
            self.cfg.energy_safety * self.lambda * dt * dt
        };
        let tolerance = solver + roundoff + splitting;
        let audit = EnergyAudit {
            energy_old,
            energy_new,
            visc_dissipation: d_visc,
            mu_dissipation: d_mu,
            defect,
            solver_term: solver,
            roundoff_term: roundoff,
            splitting_term: splitting,
            splitting_defect,
            tolerance,
            ok: defect <= tolerance && defect.is_finite(),
        };
        let next = State {
            rho: cont.rho,
            u: u_new,
            c: phase.c,
            mu: phase.mu,
            time: s.time + dt,
            eps: s.eps,
        };
        Ok((next, StepReport { audit, stats }))
    }
}

use crate::diagnostics::{record, DiagnosticsRecord};
use crate::state::State;

impl<T: Real> Stepper<T> {
    /// One step plus the diagnostics record of the new state.
    pub fn step_recorded(&mut self, state: &State<T>, m_r: T) -> Result<(State<T>, DiagnosticsRecord<T>)> {
        let (next, rep) = self.step(state)?;
        let rec = record(&next, &self.physics, m_r)?.with_step(self.step_index, rep.stats, &rep.audit);
        Ok((next, rec))
    }

    /// Records the initial state, then takes `steps` steps, handing every
    /// state and record to `observe`. Stops at the first error.
    pub fn run<F>(&mut self, initial: State<T>, m_r: T, steps: usize, mut observe: F) -> Result<State<T>>
    where
        F: FnMut(&State<T>, &DiagnosticsRecord<T>) -> Result<()>,
    {
        let mut rec0 = record(&initial, &self.physics, m_r)?;
        rec0.step = self.step_index;
        observe(&initial, &rec0)?;
        let mut s = initial;
        for _ in 0..steps {
            let (next, rec) = self.step_recorded(&s, m_r)?;
            observe(&next, &rec)?;
            s = next;
        }
        Ok(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potential::PotentialParams;

    fn physics() -> Physics<f64> {
        Physics::new(
            PotentialParams::new(1.0, 2.0, 2.0).unwrap(),
            0.05,
            ViscosityProfile::constant(1.0).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn continuity_at_rest_is_identity() {
        let g = Grid::new_1d(8, 1.0).unwrap();
        let rho = ScalarField::from_fn(g, ScalarBc::NeumannZero, |x, _| 1.0 + x);
        let c = step_continuity(&rho, &VectorField::zeros(g), 0.1, 0.5).unwrap();
        assert_eq!(c.rho.values(), rho.values());
    }

    #[test]
    fn cfl_violation_proposes_dt() {
        let g = Grid::new_1d(10, 1.0).unwrap();
        let rho = ScalarField::constant(g, 1.0, ScalarBc::NeumannZero);
        let u = VectorField::from_fn(g, |_, _| [2.0, 0.0]);
        match step_continuity(&rho, &u, 0.1, 0.5) {
            Err(Error::Cfl { proposed_dt, .. }) => assert!((proposed_dt - 0.025).abs() < 1e-15),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn dual_mass_balance_is_exact() {
        let g = Grid::new_2d([7, 5], [1.0, 0.7]).unwrap();
        let rho = ScalarField::from_fn(g, ScalarBc::NeumannZero, |x: f64, y| 1.0 + 0.3 * (4.0 * x).sin() * y);
        let u = VectorField::from_fn(g, |x: f64, y: f64| [0.3 * (5.0 * y).cos() * x, -0.2 * (3.0 * x).sin()]);
        let dt = 0.01;
        let cont = step_continuity(&rho, &u, dt, 0.5).unwrap();
        let ones = VectorField::from_fn(g, |_, _| [1.0, 1.0]);
        let div_g = dual_convection(&ones, &cont.flux);
        let r0 = face_average(&rho);
        let r1 = face_average(&cont.rho);
        for axis in 0..2 {
            for k in 0..g.n_faces(axis) {
                // the wall-normal velocity is zero, so the donor value across
                // the half cell at a wall is zero rather than one
                let (lo, hi) = g.face_cells(axis, k);
                let at_wall = if axis == 0 {
                    lo % 7 == 0 || hi % 7 == 6
                } else {
                    lo / 7 == 0 || hi / 7 == 4
                };
                if !at_wall {
                    let bal: f64 = r1.comp(axis)[k] - r0.comp(axis)[k] + dt * div_g.comp(axis)[k];
                    assert!(bal.abs() < 1e-15, "axis {axis} face {k}: {bal}");
                }
            }
        }
    }

    #[test]
    fn phase_jacobian_matches_finite_differences() {
        let g = Grid::new_1d(12, 3.0).unwrap();
        let lap = laplacian_matrix(&g);
        let rho: Vec<f64> = (0..12).map(|k| 1.0 + 0.1 * (k as f64).sin()).collect();
        let c_old: Vec<f64> = (0..12).map(|k| 0.9 * (k as f64 * 0.7).cos()).collect();
        let reg = physics().reg;
        let sys = PhaseSystem {
            lap: &lap,
            rho_new: &rho,
            rho_c_old: rho.iter().zip(&c_old).map(|(r, c)| r * c).collect(),
            convection: vec![0.0; 12],
            c_old: &c_old,
            dt: 0.1,
            delta: 1e-10,
            reg: &reg,
        };
        let x: Vec<f64> = (0..12).map(|k| 0.5 * (k as f64 * 0.3).sin()).collect();
        let dir: Vec<f64> = (0..12).map(|k| (k as f64 * 1.7).cos()).collect();
        let jv = sys.jacobian(&x).unwrap().matvec(&dir);
        let r0 = sys.residual(&x);
        let mut best = f64::INFINITY;
        for h in [1e-4, 1e-5, 1e-6, 1e-7] {
            let xp: Vec<f64> = x.iter().zip(&dir).map(|(a, d)| a + h * d).collect();
            let rp = sys.residual(&xp);
            let err = rp
                .iter()
                .zip(&r0)
                .zip(&jv)
                .map(|((p, q), j)| ((p - q) / h - j).abs())
                .fold(0.0, f64::max);
            let scale = jv.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            best = best.min(err / scale);
        }
        assert!(best <= 1e-5, "best relative agreement {best}");
    }
}
