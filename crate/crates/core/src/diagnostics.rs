//! Per-step monitors: conserved quantities, energy, dissipation and the
//! a priori estimates that should stay bounded as `eps -> 0`.

use std::io::Write;

use crate::constitutive::{cell_gradient, ViscousForm};
use crate::error::{Error, Result};
use crate::real::Real;
use crate::state::State;
use crate::stepper::{mu_dissipation, total_energy, EnergyAudit, Physics, SolverStats};

/// Exponent of the pressure estimate, `min(5/3 - 1/gamma, 3/2)`.
pub fn pressure_exponent<T: Real>(gamma: T) -> T {
    (T::lit(5.0 / 3.0) - T::one() / gamma).min(T::lit(1.5))
}

/// `p4 = 3 gamma / (gamma + 3)`; the gradient of `c` is reported in `L^{2 p4}`.
pub fn gradient_exponent<T: Real>(gamma: T) -> T {
    T::lit(3.0) * gamma / (gamma + T::lit(3.0))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiagnosticsRecord<T> {
    pub step: usize,
    pub time: T,
    /// `int rho`.
    pub mass: T,
    /// `int rho c`.
    pub mass_c: T,
    /// Regularized total energy.
    pub energy: T,
    /// `int S : grad u` (rate).
    pub visc_dissipation: T,
    /// `int |grad mu|^2` (rate).
    pub mu_dissipation: T,
    /// `int rho F'_eps(c) (c - M_r)`.
    pub ne1: T,
    /// `int rho |F'_eps(c)|`.
    pub ne1_abs: T,
    /// `(int mu^2 + |grad mu|^2)^(1/2)`.
    pub mu_h1: T,
    /// `int rho |F'_eps(c)|^2`.
    pub rho_fprime_sq: T,
    /// `int rho (|c| - 1)_+^2`.
    pub phase_defect: T,
    /// `||p(rho)||_{L^q}` with `q = pressure_exponent(gamma)`.
    pub pressure_norm: T,
    pub cmin: T,
    pub cmax: T,
    pub rhomin: T,
    pub rhomax: T,
    /// `||grad c||_{L^{2 p4}}`.
    pub grad_c_l2p4: T,
    pub stats: SolverStats<T>,
    /// `E^{n+1} + dt (D_visc + D_mu) - E^n`; zero on the initial row.
    pub energy_defect: T,
    pub tol_energy: T,
    pub energy_ok: bool,
}

/// Field quantities of one state. Solver columns are left at their defaults.
pub fn record<T: Real>(state: &State<T>, physics: &Physics<T>, m_r: T) -> Result<DiagnosticsRecord<T>> {
    let g = state.grid();
    let vol = g.cell_volume();
    let reg = &physics.reg;
    let gamma = physics.params.gamma;
    let (rho, c, mu) = (state.rho.values(), state.c.values(), state.mu.values());

    let mut ne1 = T::zero();
    let mut ne1_abs = T::zero();
    let mut fsq = T::zero();
    let mut defect = T::zero();
    let mut mu_sq = T::zero();
    let mut p_q = T::zero();
    let q = pressure_exponent(gamma);
    for k in 0..g.n_cells() {
        let fp = reg.prime(c[k]);
        ne1 += rho[k] * fp * (c[k] - m_r);
        ne1_abs += rho[k] * fp.abs();
        fsq += rho[k] * fp * fp;
        let ex = (c[k].abs() - T::one()).max(T::zero());
        defect += rho[k] * ex * ex;
        mu_sq += mu[k] * mu[k];
        p_q += rho[k].powf(gamma).powf(q);
    }
    let d_mu = mu_dissipation(&state.mu);
    let d_visc = ViscousForm::new(&state.c, &physics.viscosity).dissipation(&state.u);

    let r = T::lit(2.0) * gradient_exponent(gamma);
    let gc: T = cell_gradient(&state.c)
        .iter()
        .map(|v| (v[0] * v[0] + v[1] * v[1]).sqrt().powf(r))
        .sum();

    Ok(DiagnosticsRecord {
        step: 0,
        time: state.time,
        mass: state.mass(),
        mass_c: state.concentration_mass(),
        energy: total_energy(&state.rho, &state.u, &state.c, physics)?,
        visc_dissipation: d_visc,
        mu_dissipation: d_mu,
        ne1: ne1 * vol,
        ne1_abs: ne1_abs * vol,
        mu_h1: (mu_sq * vol + d_mu).sqrt(),
        rho_fprime_sq: fsq * vol,
        phase_defect: defect * vol,
        pressure_norm: (p_q * vol).powf(T::one() / q),
        cmin: state.c.min(),
        cmax: state.c.max(),
        rhomin: state.rho.min(),
        rhomax: state.rho.max(),
        grad_c_l2p4: (gc * vol).powf(T::one() / r),
        stats: SolverStats::default(),
        energy_defect: T::zero(),
        tol_energy: T::zero(),
        energy_ok: true,
    })
}

impl<T: Real> DiagnosticsRecord<T> {
    /// Attaches the solver and audit columns of the step that produced this state.
    pub fn with_step(mut self, step: usize, stats: SolverStats<T>, audit: &EnergyAudit<T>) -> Self {
        self.step = step;
        self.stats = stats;
        self.energy_defect = audit.defect;
        self.tol_energy = audit.tolerance;
        self.energy_ok = audit.ok;
        self
    }

    /// Scale for the sign check of `ne1`: `int rho |F'_eps(c)| (|c| + |M_r|)`
    /// is bounded by `ne1_abs * (max|c| + |M_r|)`.
    pub fn ne1_scale(&self, m_r: T) -> T {
        self.ne1_abs * (self.cmax.abs().max(self.cmin.abs()) + m_r.abs())
    }
}

/// CSV columns in file order, as `name[unit]`. `M`, `L`, `t` denote mass,
/// length and time; `E` energy (`M L^2 t^-2` per unit depth).
pub const CSV_COLUMNS: &[(&str, &str)] = &[
    ("step", "1"),
    ("time", "t"),
    ("M", "M"),
    ("M_c", "M"),
    ("E_eps", "E"),
    ("visc_dissipation", "E/t"),
    ("mu_dissipation", "E/t"),
    ("ne1", "E"),
    ("ne1_abs", "E"),
    ("mu_h1", "E/M"),
    ("rho_fprime_sq", "E^2/M"),
    ("phase_defect", "M"),
    ("pressure_norm", "E L^-d"),
    ("cmin", "1"),
    ("cmax", "1"),
    ("rhomin", "M L^-d"),
    ("rhomax", "M L^-d"),
    ("grad_c_l2p4", "L^-1"),
    ("newton_iterations", "1"),
    ("newton_krylov_iterations", "1"),
    ("newton_residual", "M"),
    ("viscous_iterations", "1"),
    ("viscous_residual", "E/L"),
    ("cfl", "1"),
    ("energy_defect", "E"),
    ("tol_energy", "E"),
    ("energy_ok", "1"),
];

pub fn csv_header() -> String {
    CSV_COLUMNS
        .iter()
        .map(|(n, u)| format!("{n}[{u}]"))
        .collect::<Vec<_>>()
        .join(",")
}

fn f<T: Real>(v: T) -> String {
    format!("{:e}", v.to_f64_lossy())
}

pub fn csv_row<T: Real>(r: &DiagnosticsRecord<T>) -> String {
    let s = &r.stats;
    [
        r.step.to_string(),
        f(r.time),
        f(r.mass),
        f(r.mass_c),
        f(r.energy),
        f(r.visc_dissipation),
        f(r.mu_dissipation),
        f(r.ne1),
        f(r.ne1_abs),
        f(r.mu_h1),
        f(r.rho_fprime_sq),
        f(r.phase_defect),
        f(r.pressure_norm),
        f(r.cmin),
        f(r.cmax),
        f(r.rhomin),
        f(r.rhomax),
        f(r.grad_c_l2p4),
        s.newton_iterations.to_string(),
        s.newton_krylov_iterations.to_string(),
        f(s.newton_residual),
        s.viscous_iterations.to_string(),
        f(s.viscous_residual),
        f(s.cfl),
        f(r.energy_defect),
        f(r.tol_energy),
        u8::from(r.energy_ok).to_string(),
    ]
    .join(",")
}

/// Streams records to a CSV sink, header first.
pub struct CsvWriter<W: Write> {
    out: W,
}

impl<W: Write> CsvWriter<W> {
    pub fn new(mut out: W) -> Result<Self> {
        writeln!(out, "{}", csv_header())?;
        Ok(Self { out })
    }

    pub fn write<T: Real>(&mut self, r: &DiagnosticsRecord<T>) -> Result<()> {
        writeln!(self.out, "{}", csv_row(r))?;
        Ok(())
    }

    pub fn into_inner(mut self) -> Result<W> {
        self.out.flush()?;
        Ok(self.out)
    }
}

/// Time-integrated estimates of a trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormSummary<T> {
    /// `||ne1||_{L^2(0,T)}`.
    pub ne1_l2: T,
    /// `||ne1_abs||_{L^2(0,T)}`.
    pub ne1_abs_l2: T,
    /// `||mu||_{L^2(0,T; W^{1,2})}`.
    pub mu_l2_h1: T,
    /// `||sqrt(rho) F'_eps(c)||_{L^2(L^2)}`.
    pub sqrt_rho_fprime_l2: T,
    /// Time maximum of `phase_defect`.
    pub phase_defect_max: T,
}

/// Trapezoid rule over the record times, which must start at 0 and end at `t_end`.
pub fn timeseries_norms<T: Real>(records: &[DiagnosticsRecord<T>], t_end: T) -> Result<NormSummary<T>> {
    if records.len() < 2 {
        return Err(Error::Trajectory(format!("need at least 2 records, got {}", records.len())));
    }
    let t0 = records[0].time;
    let t1 = records[records.len() - 1].time;
    let slack = T::lit(1e-9) * t_end.abs().max(T::one());
    if t0.abs() > slack || (t1 - t_end).abs() > slack {
        return Err(Error::Trajectory(format!(
            "records cover [{}, {}], expected [0, {}]",
            t0.to_f64_lossy(),
            t1.to_f64_lossy(),
            t_end.to_f64_lossy()
        )));
    }
    let half = T::lit(0.5);
    let integrate = |v: &dyn Fn(&DiagnosticsRecord<T>) -> T| -> T {
        records
            .windows(2)
            .map(|w| half * (w[1].time - w[0].time) * (v(&w[0]) + v(&w[1])))
            .sum()
    };
    Ok(NormSummary {
        ne1_l2: integrate(&|r| r.ne1 * r.ne1).sqrt(),
        ne1_abs_l2: integrate(&|r| r.ne1_abs * r.ne1_abs).sqrt(),
        mu_l2_h1: integrate(&|r| r.mu_h1 * r.mu_h1).sqrt(),
        sqrt_rho_fprime_l2: integrate(&|r| r.rho_fprime_sq).sqrt(),
        phase_defect_max: records.iter().map(|r| r.phase_defect).fold(T::zero(), |a, b| a.max(b)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constitutive::ViscosityProfile;
    use crate::grid::{Grid, ScalarBc, ScalarField, VectorField};
    use crate::potential::PotentialParams;

    fn uniform(c: f64, theta: f64) -> (State<f64>, Physics<f64>) {
        let g = Grid::new_1d(10, 1.0).unwrap();
        let phys = Physics::new(
            PotentialParams::new(theta, 3.0, 2.0).unwrap(),
            0.1,
            ViscosityProfile::constant(1.0).unwrap(),
        )
        .unwrap();
        let s = State {
            rho: ScalarField::constant(g, 1.0, ScalarBc::NeumannZero),
            u: VectorField::zeros(g),
            c: ScalarField::constant(g, c, ScalarBc::NeumannZero),
            mu: ScalarField::constant(g, 0.0, ScalarBc::NeumannZero),
            time: 0.0,
            eps: 0.1,
        };
        (s, phys)
    }

    #[test]
    fn ne1_closed_form() {
        let (s, phys) = uniform(0.5, 2.0);
        let r = record(&s, &phys, 0.2).unwrap();
        // F'(0.5) = ln 3 for theta = 2
        assert!((r.ne1 - 3f64.ln() * 0.3).abs() < 1e-14);
        assert!((r.ne1 - 0.3295837).abs() < 5e-8);
        assert_eq!(r.phase_defect, 0.0);
    }

    #[test]
    fn equilibrium_has_zero_ne1() {
        let (s, phys) = uniform(0.2, 1.0);
        let r = record(&s, &phys, 0.2).unwrap();
        assert_eq!(r.ne1, 0.0);
        assert_eq!(r.visc_dissipation, 0.0);
        assert_eq!(r.mu_dissipation, 0.0);
    }

    #[test]
    fn constant_series_norm() {
        let (s, phys) = uniform(0.5, 2.0);
        let base = record(&s, &phys, 0.2).unwrap();
        let recs: Vec<_> = (0..=8)
            .map(|k| DiagnosticsRecord {
                time: k as f64 * 0.5,
                ne1: 3.0,
                ..base
            })
            .collect();
        let n = timeseries_norms(&recs, 4.0).unwrap();
        assert!((n.ne1_l2 - 3.0 * 2.0).abs() < 1e-13);
        assert!(timeseries_norms(&recs[..1], 0.0).is_err());
        assert!(timeseries_norms(&recs, 5.0).is_err());
    }

    #[test]
    fn header_matches_row_width() {
        let (s, phys) = uniform(0.5, 2.0);
        let r = record(&s, &phys, 0.2).unwrap();
        assert_eq!(csv_header().split(',').count(), csv_row(&r).split(',').count());
    }

    #[test]
    fn pressure_exponent_values() {
        assert!((pressure_exponent(2.0f64) - (5.0 / 3.0 - 0.5)).abs() < 1e-15);
        assert_eq!(pressure_exponent(100.0f64), 1.5);
    }
}
