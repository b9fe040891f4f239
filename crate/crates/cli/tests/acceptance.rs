//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion.
//!
//! A criterion listed in `KNOWN_RED` is expected to fail and is reported as
//! such; the process fails if any other criterion fails, or if a known-red
//! criterion unexpectedly passes (so the list cannot go stale).

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use nsch_cli::commands::{self, prepare, simulate_to_dir, Scenario, DIAGNOSTICS_FILE};
use nsch_cli::config::{parse_config, RunConfig};
use nsch_core::grid::{Grid, ScalarBc, ScalarField, VectorField};
use nsch_core::linsolve::{newton_solve, CsrMatrix, NewtonConfig};
use nsch_core::potential::{elastic_energy, elastic_free_energy, PotentialParams, RegularizedPotential};
use nsch_core::state::{validate_initial_data, InitialData, Preset, Violation};
use nsch_core::sweep::{run_sweep, thread_count, MemberRun, SweepPlan, SweepReport};
use nsch_core::weakform::{audit_energy_inequality, refinement_table, residual_set, Trajectory};
use nsch_core::Record64;

/// Criteria that cannot be met by this implementation; see the README.
const KNOWN_RED: &[usize] = &[5];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn configs() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn load(name: &str) -> RunConfig {
    let text = std::fs::read_to_string(configs().join(name)).unwrap();
    parse_config(&text).unwrap()
}

struct Finished {
    records: Vec<Record64>,
    c_frames: Vec<Vec<f64>>,
    error: Option<String>,
    elapsed: Duration,
    csv: Vec<u8>,
    m_r: f64,
}

fn simulate(cfg: &RunConfig, eps: f64, dir: &Path, keep_c: bool) -> (Scenario, Finished) {
    let sc = prepare(cfg, eps, &configs()).unwrap_or_else(|f| panic!("{f}"));
    let start = Instant::now();
    let mut records = Vec::new();
    let mut c_frames = Vec::new();
    let res = simulate_to_dir(&sc, dir, "", |s, r| {
        records.push(*r);
        if keep_c {
            c_frames.push(s.c.values().to_vec());
        }
    });
    let elapsed = start.elapsed();
    let csv = std::fs::read(dir.join(DIAGNOSTICS_FILE)).unwrap_or_default();
    let m_r = sc.m_r();
    (
        sc,
        Finished {
            records,
            c_frames,
            error: res.err().map(|f| f.to_string()),
            elapsed,
            csv,
            m_r,
        },
    )
}

fn drift(records: &[Record64]) -> (f64, f64) {
    let (m0, mc0) = (records[0].mass, records[0].mass_c);
    let scale = m0.abs();
    records.iter().fold((0.0f64, 0.0f64), |(a, b), r| {
        (a.max(((r.mass - m0) / m0).abs()), b.max((r.mass_c - mc0).abs() / scale))
    })
}

fn min_ne1(run: &Finished) -> f64 {
    run.records.iter().map(|r| r.ne1 / r.ne1_scale(run.m_r)).fold(f64::INFINITY, f64::min)
}

fn criterion_1() -> Outcome {
    let mut notes = Vec::new();
    let mut pass = true;
    for (theta, theta0, eps) in [(1.0, 2.0, 1e-1), (1.0, 2.0, 1e-3), (0.5, 1.0, 1e-2)] {
        let start = Instant::now();
        let mut sink = Vec::new();
        let ok = commands::verify_potential(theta, theta0, eps, &mut sink).is_ok();
        let t = start.elapsed();
        pass &= ok && t < Duration::from_secs(1);
        notes.push(format!("({theta},{theta0},{eps:e}) {} in {t:.0?}", if ok { "pass" } else { "fail" }));
    }
    outcome(pass, notes.join("; "))
}

fn criterion_9() -> Outcome {
    // scalar Newton on F'_eps(x) + x = a against bisection
    let reg = RegularizedPotential::new(PotentialParams::new(1.0, 2.0, 2.0).unwrap(), 0.1).unwrap();
    let g = |x: f64| reg.prime(x) + x;
    let mut worst_root: f64 = 0.0;
    for k in 0..20 {
        let a = -30.0 + 60.0 * k as f64 / 19.0;
        let rep = newton_solve(
            |x: &[f64]| Ok(vec![g(x[0]) - a]),
            |x: &[f64]| CsrMatrix::from_raw(1, 1, vec![0, 1], vec![0], vec![reg.second(x[0]) + 1.0]),
            &[0.0],
            &NewtonConfig {
                abs_tol: 1e-13,
                rel_tol: 1e-15,
                ..NewtonConfig::default()
            },
        )
        .unwrap();
        let (mut lo, mut hi) = (-100.0f64, 100.0f64);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if g(mid) < a {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        worst_root = worst_root.max((rep.x[0] - 0.5 * (lo + hi)).abs());
    }

    // f_e as the integral of p(z)/z^2 from 1 to rho, by composite Simpson
    let mut worst_fe: f64 = 0.0;
    for k in 0..20 {
        let rho = 0.05 * (400.0f64).powf(k as f64 / 19.0);
        let gamma = [1.6, 2.0, 2.5, 3.0][k % 4];
        let n = 20_000;
        let h = (rho - 1.0) / n as f64;
        let f = |z: f64| z.powf(gamma) / (z * z);
        let mut s = f(1.0) + f(rho);
        for i in 1..n {
            s += f(1.0 + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        let quad = s * h / 3.0;
        let closed = elastic_free_energy(rho, gamma).unwrap();
        // rho f_e(rho) = rho^gamma/(gamma-1) - rho/(gamma-1)
        let affine = rho * closed + rho / (gamma - 1.0) - elastic_energy(rho, gamma).unwrap();
        worst_fe = worst_fe
            .max((quad - closed).abs() / closed.abs().max(1.0))
            .max(affine.abs() / rho.powf(gamma).max(1.0));
    }
    outcome(
        worst_root <= 1e-9 && worst_fe <= 1e-9,
        format!("max root gap {worst_root:.2e}, max f_e gap {worst_fe:.2e}"),
    )
}

fn criterion_8() -> Outcome {
    let g = Grid::new_1d(16, 4.0).unwrap();
    let good = PotentialParams { theta: 1.0, theta0: 2.0, gamma: 2.0 };
    let codes = |data: &InitialData<f64>, p: &PotentialParams<f64>| -> Vec<&'static str> {
        match validate_initial_data(data, p) {
            Ok(_) => Vec::new(),
            Err(v) => v.iter().map(Violation::code).collect(),
        }
    };
    let uniform = |c: f64| Preset::Uniform { rho: 1.0, c }.build(&g).unwrap();
    let mut notes = Vec::new();
    let check = |notes: &mut Vec<String>, name: &str, got: Vec<&'static str>, want: &str| {
        let ok = got.contains(&want);
        notes.push(format!("{name}: {}", if ok { want } else { "not rejected" }));
        ok
    };
    let mut pass = true;
    pass &= check(&mut notes, "gamma 1.2", codes(&uniform(0.1), &PotentialParams { gamma: 1.2, ..good }), "adiabatic-exponent");
    let skew = ScalarField::from_fn(g, ScalarBc::NeumannZero, |x, _| if x < 2.0 { 1.0 } else { 0.999 });
    let data = InitialData::new(ScalarField::constant(g, 1.0, ScalarBc::NeumannZero), VectorField::zeros(g), skew).unwrap();
    let mean_ok = codes(&data, &good).is_empty();
    notes.push(format!("|M_r| < 1 near a pure phase accepted: {mean_ok}"));
    pass &= mean_ok;
    pass &= check(&mut notes, "c0 = 1", codes(&uniform(1.0), &good), "mean-constraint");
    pass &= check(&mut notes, "c0 = -1", codes(&uniform(-1.0), &good), "mean-constraint");
    let rho = ScalarField::from_fn(g, ScalarBc::NeumannZero, |x, _| if x < 2.0 { 1.0 } else { 0.0 });
    let mut m = VectorField::zeros(g);
    m.comp_mut(0)[12] = 0.3;
    let vac = InitialData::new(rho, m, ScalarField::constant(g, 0.1, ScalarBc::NeumannZero)).unwrap();
    pass &= check(&mut notes, "momentum on vacuum", codes(&vac, &good), "finite-initial-energy");
    let cfg_err = parse_config("grid.cells = 4\ngrid.lengths = 1\ninitial.preset = uniform\ntime.t_end = 1\nphysics.gamma = 1.2\n")
        .unwrap_err();
    let named = cfg_err.iter().any(|e| e.message.contains("γ > 3/2"));
    notes.push(format!("config gamma 1.2 names the condition: {named}"));
    pass &= named;
    outcome(pass, notes.join("; "))
}

fn criterion_7(tmp: &Path) -> Outcome {
    let cfg = load("advection_1d.cfg");
    let mut sets = Vec::new();
    for level in 0..2 {
        let lc = cfg.refined(level);
        let sc = prepare(&lc, lc.eps, &configs()).unwrap();
        let dir = tmp.join(format!("adv_{level}"));
        let (_, run) = simulate(&lc, lc.eps, &dir, false);
        if let Some(e) = run.error {
            return outcome(false, e);
        }
        let traj = Trajectory::<f64>::read(std::fs::read(dir.join("trajectory.nscht")).unwrap().as_slice()).unwrap();
        sets.push(residual_set(&traj, &sc.physics, 0.75).unwrap());
    }
    let rows = refinement_table(&sets).unwrap();
    let worst = rows.iter().map(|r| r.ratios()[0]).fold(f64::INFINITY, f64::min);
    let pairs = rows.iter().filter(|r| r.identity == "renormalized-continuity").map(|r| r.variant.clone()).collect::<std::collections::BTreeSet<_>>();
    outcome(
        worst >= 1.5 && pairs.len() >= 2,
        format!("{} residuals, smallest halving ratio {worst:.3}, renormalizations {:?}", rows.len(), pairs),
    )
}

fn sweep(tmp: &Path) -> Result<SweepReport, String> {
    let cfg = load("sweep_spinodal_1d.cfg");
    let plan = SweepPlan::new(cfg.schedule.clone()).map_err(|e| e.to_string())?;
    let threads = thread_count(plan.eps_schedule.len()).map_err(|e| e.to_string())?;
    let (report, _) = run_sweep::<f64, _>(&plan, threads, |i, eps| {
        let (sc, run) = simulate(&cfg, eps, &tmp.join(format!("sweep_{i}")), true);
        if let Some(e) = run.error {
            return Err(nsch_core::Error::InvalidParameter(e));
        }
        Ok(MemberRun {
            t_end: run.records.last().map(|r| r.time).unwrap_or(0.0),
            records: run.records,
            c_frames: run.c_frames,
            cell_volume: sc.grid.cell_volume(),
            seam_curvature: sc.physics.reg.seam_curvature(),
        })
    })
    .map_err(|e| e.to_string())?;
    Ok(report)
}

fn main() {
    let tmp = tempfile::tempdir().unwrap();
    let tmp = tmp.path();
    let mut results: Vec<(usize, &str, Outcome)> = Vec::new();

    results.push((1, "potential fidelity", criterion_1()));

    let spin_cfg = load("spinodal_1d.cfg");
    let shear_cfg = load("shear_2d.cfg");
    let (_, spin) = simulate(&spin_cfg, spin_cfg.eps, &tmp.join("spin_a"), false);
    let (_, shear) = simulate(&shear_cfg, shear_cfg.eps, &tmp.join("shear"), false);
    let mut frozen_cfg = spin_cfg.clone();
    frozen_cfg.frozen_velocity = true;
    let (_, frozen) = simulate(&frozen_cfg, frozen_cfg.eps, &tmp.join("frozen"), false);

    {
        let mut pass = true;
        let mut notes = Vec::new();
        for (name, run, limit) in [("1D", &spin, 60), ("2D", &shear, 600)] {
            if let Some(e) = &run.error {
                pass = false;
                notes.push(format!("{name}: {e}"));
                continue;
            }
            let (dm, dmc) = drift(&run.records);
            pass &= dm <= 1e-11 && dmc <= 1e-11 && run.elapsed < Duration::from_secs(limit);
            notes.push(format!(
                "{name}: {} steps, drift M {dm:.1e}, M_c {dmc:.1e}, {:.1?}",
                run.records.len() - 1,
                run.elapsed
            ));
        }
        results.push((2, "conservation", outcome(pass, notes.join("; "))));
    }

    {
        let mut pass = true;
        let mut notes = Vec::new();
        for (name, run) in [("1D strict", &spin), ("2D strict", &shear), ("frozen", &frozen)] {
            let failures = run.records.iter().filter(|r| !r.energy_ok).count();
            let audit = audit_energy_inequality(&run.records).map(|a| a.ok()).unwrap_or(false);
            let ok = run.error.is_none() && failures == 0 && audit;
            pass &= ok;
            notes.push(format!("{name}: {failures} step failures, integrated audit {}", if audit { "ok" } else { "violated" }));
        }
        results.push((3, "energy inequality", outcome(pass, notes.join("; "))));
    }

    let report = sweep(tmp);

    {
        let mut worst = f64::INFINITY;
        for run in [&spin, &shear, &frozen] {
            worst = worst.min(min_ne1(run));
        }
        let pass = worst >= -1e-10;
        results.push((4, "sign property", outcome(pass, format!("min ne1/scale over all records {worst:.3e}"))));
    }

    match &report {
        Ok(r) => {
            let span = r.defect_span().unwrap_or(f64::NAN);
            let defects: Vec<String> = r.members.iter().map(|m| format!("{:.1e}", m.scaled_defect)).collect();
            results.push((
                5,
                "defect scaling",
                outcome(
                    span < 10.0,
                    format!("span {span:.3e}; scaled defects [{}]", defects.join(", ")),
                ),
            ));
            let ratios = r.uniformity_ratios();
            let pass = ratios.map(|q| q.iter().all(|v| *v <= 2.0)).unwrap_or(false);
            results.push((6, "uniform norms", outcome(pass, format!("ratios eps_min / eps_max {ratios:.4?}"))));
        }
        Err(e) => {
            results.push((5, "defect scaling", outcome(false, e.clone())));
            results.push((6, "uniform norms", outcome(false, e.clone())));
        }
    }

    results.push((7, "weak-form audit", criterion_7(tmp)));
    results.push((8, "admissibility validator", criterion_8()));
    results.push((9, "oracle equivalence", criterion_9()));

    {
        let (_, spin_b) = simulate(&spin_cfg, spin_cfg.eps, &tmp.join("spin_b"), false);
        let adv = load("advection_1d.cfg");
        let (_, a1) = simulate(&adv, adv.eps, &tmp.join("adv_a"), false);
        let (_, a2) = simulate(&adv, adv.eps, &tmp.join("adv_b"), false);
        let mut short = shear_cfg.clone();
        short.t_end = 2.5;
        let (_, s1) = simulate(&short, short.eps, &tmp.join("shear_a"), false);
        let (_, s2) = simulate(&short, short.eps, &tmp.join("shear_b"), false);
        let same = |a: &Finished, b: &Finished| !a.csv.is_empty() && a.csv == b.csv;
        let flags = [same(&spin, &spin_b), same(&a1, &a2), same(&s1, &s2)];
        results.push((
            10,
            "determinism",
            outcome(flags.iter().all(|f| *f), format!("identical CSVs (spinodal, advection, shear): {flags:?}")),
        ));
    }

    let mut unexpected = Vec::new();
    for (n, name, o) in &results {
        let known = KNOWN_RED.contains(n);
        let tag = match (o.pass, known) {
            (true, false) => "PASS",
            (false, true) => "FAIL (known)",
            (false, false) => "FAIL",
            (true, true) => "PASS (listed as known red)",
        };
        println!("criterion {n:>2} {tag:<12} {name}: {}", o.detail);
        if o.pass == known {
            unexpected.push(*n);
        }
    }
    if !unexpected.is_empty() {
        println!("unexpected outcome for criteria {unexpected:?}");
        std::process::exit(1);
    }
}
