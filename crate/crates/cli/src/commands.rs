//! Subcommand implementations.

use std::fmt;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, Context};
use nsch_core::diagnostics::CsvWriter;
use nsch_core::grid::{read_scalar_binary, write_scalar_binary, Grid, ScalarBc, ScalarField, VectorField};
use nsch_core::state::{build_initial_state, validate_initial_data, AdmissibleInitialData, InitialData};
use nsch_core::stepper::{Physics, Stepper};
use nsch_core::sweep::{run_sweep, thread_count, MemberRun, SweepPlan};
use nsch_core::weakform::{refinement_table, residual_set, Trajectory, TrajectoryWriter};
use nsch_core::{potential, Grid64, Physics64, Record64, State64, Stepper64};

use crate::config::{parse_config, resolve_dt, InitialSpec, RunConfig};

/// Smallest observed convergence order `check-weakform` accepts.
pub const ORDER_FLOOR: f64 = 0.95;

pub const DIAGNOSTICS_FILE: &str = "diagnostics.csv";
pub const TRAJECTORY_FILE: &str = "trajectory.nscht";
pub const CONFIG_COPY: &str = "config.cfg";
pub const SWEEP_REPORT: &str = "sweep_report.csv";

/// Why a command failed, which decides the exit code.
#[derive(Debug)]
pub enum Failure {
    /// Rejected input or a failed check (exit 1).
    Validation(Vec<String>),
    /// I/O or solver failure (exit 2).
    Runtime(anyhow::Error),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Validation(_) => crate::EXIT_VALIDATION,
            Failure::Runtime(_) => crate::EXIT_RUNTIME,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Validation(msgs) => {
                writeln!(f, "validation failed:")?;
                for m in msgs {
                    writeln!(f, "  {m}")?;
                }
                Ok(())
            }
            Failure::Runtime(e) => write!(f, "error: {e:#}"),
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

impl From<nsch_core::Error> for Failure {
    fn from(e: nsch_core::Error) -> Self {
        Failure::Runtime(e.into())
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.into())
    }
}

type CmdResult = Result<(), Failure>;

/// Reads and parses a config file, returning its text as well.
pub fn load_config(path: &Path) -> Result<(String, RunConfig), Failure> {
    let text = fs::read_to_string(path).with_context(|| format!("cannot read config file {}", path.display()))?;
    let cfg = parse_config(&text).map_err(|errs| {
        Failure::Validation(errs.iter().map(|e| format!("{}: {e}", path.display())).collect())
    })?;
    Ok((text, cfg))
}

fn base_dir(config_path: &Path) -> PathBuf {
    config_path.parent().map(Path::to_path_buf).unwrap_or_default()
}

/// A fully prepared simulation: grid, physics, initial state and time step.
pub struct Scenario {
    pub cfg: RunConfig,
    pub grid: Grid64,
    pub physics: Physics64,
    pub admissible: AdmissibleInitialData<f64>,
    pub initial: State64,
    pub dt: f64,
    pub steps: usize,
}

impl Scenario {
    /// A stepper with its energy tolerance calibrated on the initial state.
    pub fn stepper(&self) -> nsch_core::Result<Stepper64> {
        let mut st = Stepper::new(&self.grid, self.physics, self.cfg.step_config(self.dt))?;
        st.calibrate(&self.initial, self.dt)?;
        Ok(st)
    }

    pub fn m_r(&self) -> f64 {
        self.admissible.m_r
    }
}

fn read_field(path: &Path) -> Result<ScalarField<f64>, Failure> {
    let f = File::open(path).with_context(|| format!("cannot open field file {}", path.display()))?;
    let field =
        read_scalar_binary(BufReader::new(f)).with_context(|| format!("cannot read field file {}", path.display()))?;
    Ok(field)
}

/// Initial data named by the configuration. File paths are relative to `base`.
pub fn initial_data(cfg: &RunConfig, grid: &Grid64, base: &Path) -> Result<InitialData<f64>, Failure> {
    match &cfg.initial {
        InitialSpec::Preset(p) => Ok(p.build(grid)?),
        InitialSpec::Files { rho, c } => {
            let rho = read_field(&base.join(rho))?;
            let c = read_field(&base.join(c))?;
            for (name, f) in [("initial.rho_file", &rho), ("initial.c_file", &c)] {
                if f.grid() != grid {
                    return Err(Failure::Validation(vec![format!(
                        "{name}: field grid {:?} x {:?} does not match grid.cells / grid.lengths",
                        f.grid().cells_per_axis(),
                        f.grid().lengths()
                    )]));
                }
            }
            let c = c.with_bc(ScalarBc::NeumannZero);
            let rho = rho.with_bc(ScalarBc::NeumannZero);
            Ok(InitialData::new(rho, VectorField::zeros(*grid), c)?)
        }
    }
}

/// Checks admissibility of the initial data without building the physics.
pub fn admissible(cfg: &RunConfig, base: &Path) -> Result<(Grid64, AdmissibleInitialData<f64>), Failure> {
    let grid = Grid::new(&cfg.cells, &cfg.lengths)?;
    let data = initial_data(cfg, &grid, base)?;
    let adm = validate_initial_data(&data, &cfg.params())
        .map_err(|vs| Failure::Validation(vs.iter().map(|v| v.to_string()).collect()))?;
    Ok((grid, adm))
}

pub fn prepare(cfg: &RunConfig, eps: f64, base: &Path) -> Result<Scenario, Failure> {
    let (grid, adm) = admissible(cfg, base)?;
    let physics = Physics::new(cfg.params(), eps, cfg.viscosity()?)?;
    let initial = build_initial_state(&adm, &physics.reg, cfg.delta_reg)?;
    let rate: f64 = (0..grid.dim()).map(|k| initial.u.max_abs(k) / grid.h(k)).sum();
    let (dt, steps) = resolve_dt(&cfg.dt, cfg.t_end, cfg.cfl_safety, rate);
    Ok(Scenario {
        cfg: cfg.clone(),
        grid,
        physics,
        admissible: adm,
        initial,
        dt,
        steps,
    })
}

/// What a finished (or aborted) run looked like.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub steps_done: usize,
    pub dt: f64,
    pub mass_drift: f64,
    pub mass_c_drift: f64,
    pub audit_failures: usize,
    pub worst_ne1: f64,
    pub last: Option<Record64>,
}

fn write_snapshot(dir: &Path, step: usize, s: &State64) -> nsch_core::Result<()> {
    for (name, f) in [("rho", &s.rho), ("c", &s.c), ("mu", &s.mu)] {
        let path = dir.join(format!("{name}_{step:06}.nschf"));
        let mut w = BufWriter::new(File::create(path)?);
        write_scalar_binary(f, &mut w)?;
        w.flush()?;
    }
    Ok(())
}

/// Runs a scenario, streaming diagnostics, snapshots and trajectory frames
/// into `dir`. `observe` sees every state and record as well.
///
/// Trajectory frames are kept every `output.snapshot_every` steps (only the
/// endpoints when it is 0) so the stored spacing stays uniform; field
/// snapshots additionally include the final step.
pub fn simulate_to_dir<F>(sc: &Scenario, dir: &Path, config_text: &str, mut observe: F) -> Result<RunSummary, Failure>
where
    F: FnMut(&State64, &Record64),
{
    let snap_dir = dir.join("snapshots");
    fs::create_dir_all(&snap_dir).with_context(|| format!("cannot create output directory {}", dir.display()))?;
    fs::write(dir.join(CONFIG_COPY), config_text)?;
    let mut csv = CsvWriter::new(BufWriter::new(File::create(dir.join(DIAGNOSTICS_FILE))?))?;
    let mut traj = TrajectoryWriter::new(BufWriter::new(File::create(dir.join(TRAJECTORY_FILE))?), &sc.grid)?;

    let every = sc.cfg.snapshot_every;
    let steps = sc.steps;
    let mut summary = RunSummary {
        steps_done: 0,
        dt: sc.dt,
        mass_drift: 0.0,
        mass_c_drift: 0.0,
        audit_failures: 0,
        worst_ne1: f64::INFINITY,
        last: None,
    };
    let (m0, mc0) = (sc.initial.mass(), sc.initial.concentration_mass());
    let rel = |a: f64, b: f64| if b != 0.0 { ((a - b) / b).abs() } else { (a - b).abs() };

    let mut stepper = sc.stepper()?;
    let result = stepper.run(sc.initial.clone(), sc.m_r(), steps, |s, r| {
        csv.write(r)?;
        let step = r.step;
        let in_traj = if every == 0 { step == 0 || step == steps } else { step % every == 0 };
        if in_traj {
            traj.push(s)?;
        }
        if in_traj || step == steps {
            write_snapshot(&snap_dir, step, s)?;
        }
        summary.steps_done = step;
        summary.mass_drift = summary.mass_drift.max(rel(r.mass, m0));
        summary.mass_c_drift = summary.mass_c_drift.max(rel(r.mass_c, mc0));
        summary.worst_ne1 = summary.worst_ne1.min(r.ne1 / r.ne1_scale(sc.m_r()));
        if !r.energy_ok {
            summary.audit_failures += 1;
        }
        summary.last = Some(*r);
        observe(s, r);
        Ok(())
    });
    let flushed = csv.into_inner().map(|_| ()).and_then(|_| traj.finish().map(|_| ()));
    if let Err(e) = result {
        return Err(Failure::Runtime(anyhow!(e).context(format!(
            "run aborted after {} of {steps} steps; partial output in {}",
            summary.steps_done,
            dir.display()
        ))));
    }
    flushed?;
    Ok(summary)
}

/// Runs a scenario in memory and returns every state.
pub fn simulate_frames(sc: &Scenario) -> nsch_core::Result<Vec<State64>> {
    let mut frames = Vec::with_capacity(sc.steps + 1);
    sc.stepper()?.run(sc.initial.clone(), sc.m_r(), sc.steps, |s, _| {
        frames.push(s.clone());
        Ok(())
    })?;
    Ok(frames)
}

fn print_summary(out: &mut dyn Write, s: &RunSummary) -> std::io::Result<()> {
    writeln!(out, "steps            {}", s.steps_done)?;
    writeln!(out, "dt               {:e}", s.dt)?;
    writeln!(out, "mass drift       {:e}", s.mass_drift)?;
    writeln!(out, "mass_c drift     {:e}", s.mass_c_drift)?;
    writeln!(out, "audit failures   {}", s.audit_failures)?;
    writeln!(out, "min ne1/scale    {:e}", s.worst_ne1)?;
    if let Some(r) = &s.last {
        writeln!(out, "final time       {:e}", r.time)?;
        writeln!(out, "final energy     {:e}", r.energy)?;
        writeln!(out, "c range          [{:.6}, {:.6}]", r.cmin, r.cmax)?;
    }
    Ok(())
}

pub fn run(config_path: &Path, out_dir: Option<&Path>, out: &mut dyn Write) -> CmdResult {
    let (text, cfg) = load_config(config_path)?;
    let sc = prepare(&cfg, cfg.eps, &base_dir(config_path))?;
    let dir = out_dir.map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from(&cfg.directory));
    writeln!(out, "running {} steps of dt {:e} into {}", sc.steps, sc.dt, dir.display())?;
    let start = Instant::now();
    let summary = simulate_to_dir(&sc, &dir, &text, |_, _| {})?;
    print_summary(out, &summary)?;
    writeln!(out, "wall time        {:.2?}", start.elapsed())?;
    Ok(())
}

pub fn sweep(config_path: &Path, out_dir: Option<&Path>, out: &mut dyn Write) -> CmdResult {
    let (text, cfg) = load_config(config_path)?;
    let base = base_dir(config_path);
    let plan = SweepPlan::new(cfg.schedule.clone())?;
    // admissibility does not depend on eps, so reject bad data before fanning out
    admissible(&cfg, &base)?;
    let dir = out_dir.map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from(&cfg.directory));
    fs::create_dir_all(&dir).with_context(|| format!("cannot create output directory {}", dir.display()))?;
    let threads = thread_count(plan.eps_schedule.len())?;
    writeln!(out, "sweeping {} members on {threads} threads into {}", plan.eps_schedule.len(), dir.display())?;
    let start = Instant::now();

    let (report, _) = run_sweep::<f64, _>(&plan, threads, |i, eps| {
        let to_core = |f: Failure| nsch_core::Error::InvalidParameter(f.to_string().trim_end().to_string());
        let sc = prepare(&cfg, eps, &base).map_err(to_core)?;
        let mdir = dir.join(format!("member_{i}_eps_{eps:e}"));
        let mut records = Vec::with_capacity(sc.steps + 1);
        let mut c_frames = Vec::with_capacity(sc.steps + 1);
        let summary = simulate_to_dir(&sc, &mdir, &text, |s, r| {
            records.push(*r);
            c_frames.push(s.c.values().to_vec());
        })
        .map_err(to_core)?;
        Ok(MemberRun {
            records,
            c_frames,
            cell_volume: sc.grid.cell_volume(),
            t_end: summary.last.map(|r| r.time).unwrap_or(0.0),
            seam_curvature: sc.physics.reg.seam_curvature(),
        })
    })?;

    let path = dir.join(SWEEP_REPORT);
    let mut w = BufWriter::new(File::create(&path)?);
    report.write_csv(&mut w)?;
    w.flush()?;
    report.write_csv(&mut *out)?;
    writeln!(out, "wall time {:.2?}; report in {}", start.elapsed(), path.display())?;
    if !report.complete() {
        let failed: Vec<String> = report
            .members
            .iter()
            .filter_map(|m| m.failure.as_ref().map(|e| format!("eps {:e}: {e}", m.eps)))
            .collect();
        return Err(Failure::Runtime(anyhow!("{} sweep member(s) failed:\n{}", failed.len(), failed.join("\n"))));
    }
    Ok(())
}

fn uniform_spacing(traj: &Trajectory<f64>, dt: f64) -> bool {
    let t = traj.times();
    t.len() >= 2 && t.windows(2).all(|w| ((w[1] - w[0]) - dt).abs() <= 1e-9 * dt)
}

pub fn check_weakform(dir: &Path, refinements: u32, support_fraction: f64, out: &mut dyn Write) -> CmdResult {
    if refinements == 0 {
        return Err(Failure::Validation(vec!["--refinements must be at least 1".into()]));
    }
    let cfg_path = dir.join(CONFIG_COPY);
    let (_, cfg) = load_config(&cfg_path)?;
    let mut sets = Vec::new();
    for level in 0..=refinements {
        let lcfg = cfg.refined(level);
        let sc = prepare(&lcfg, lcfg.eps, dir)?;
        let mut traj = None;
        if level == 0 {
            let path = dir.join(TRAJECTORY_FILE);
            let stored = File::open(&path)
                .map_err(nsch_core::Error::from)
                .and_then(|f| Trajectory::<f64>::read(BufReader::new(f)))
                .with_context(|| format!("cannot read {}", path.display()))?;
            if uniform_spacing(&stored, sc.dt) {
                writeln!(out, "level 0: stored trajectory ({} frames)", stored.frames.len())?;
                traj = Some(stored);
            } else {
                writeln!(out, "level 0: stored frames are not one step apart; re-running")?;
            }
        }
        let traj = match traj {
            Some(t) => t,
            None => {
                let t = Trajectory::new(simulate_frames(&sc)?)?;
                writeln!(
                    out,
                    "level {level}: {} cells, dt {:e}, {} frames",
                    sc.grid.n_cells(),
                    sc.dt,
                    t.frames.len()
                )?;
                t
            }
        };
        sets.push(residual_set(&traj, &sc.physics, support_fraction)?);
    }

    let rows = refinement_table(&sets)?;
    writeln!(out, "{:<26} {:<12} {:<7} {:<6} residuals / orders", "identity", "variant", "conv", "native")?;
    let mut bad = Vec::new();
    for row in &rows {
        let res: Vec<String> = row.residuals.iter().map(|r| format!("{r:.4e}")).collect();
        let ord: Vec<String> = row.orders().iter().map(|o| format!("{o:.3}")).collect();
        writeln!(
            out,
            "{:<26} {:<12} {:<7} {:<6} [{}] / [{}]",
            row.identity,
            row.variant,
            row.convention.name(),
            row.native(),
            res.join(", "),
            ord.join(", ")
        )?;
        if row.orders().iter().any(|o| !(*o >= ORDER_FLOOR)) {
            bad.push(format!(
                "{} {} ({}): observed order below {ORDER_FLOOR}",
                row.identity,
                row.variant,
                row.convention.name()
            ));
        }
    }
    if bad.is_empty() {
        Ok(())
    } else {
        Err(Failure::Validation(bad))
    }
}

pub fn verify_potential(theta: f64, theta0: f64, eps: f64, out: &mut dyn Write) -> CmdResult {
    let rows = potential::verify(theta, theta0, eps).map_err(|e| Failure::Validation(vec![e.to_string()]))?;
    writeln!(out, "{:<40} {:<6} {:>12} {:>12}  detail", "check", "result", "worst", "bound")?;
    let mut failed = Vec::new();
    for r in &rows {
        let status = if r.passed { "pass" } else { "FAIL" };
        writeln!(out, "{:<40} {:<6} {:>12.3e} {:>12.3e}  {}", r.name, status, r.worst, r.bound, r.detail)?;
        if !r.passed {
            failed.push(format!("{}: {}", r.name, r.detail));
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Validation(failed))
    }
}

pub fn validate_initial(config_path: &Path, out: &mut dyn Write) -> CmdResult {
    let (_, cfg) = load_config(config_path)?;
    let (_, adm) = admissible(&cfg, &base_dir(config_path))?;
    writeln!(out, "initial data admissible")?;
    writeln!(out, "  M   = {:e}", adm.mass)?;
    writeln!(out, "  M_c = {:e}", adm.mass_c)?;
    writeln!(out, "  M_r = {:e}", adm.m_r)?;
    writeln!(out, "  E0  = {:e}", adm.e0)?;
    Ok(())
}
