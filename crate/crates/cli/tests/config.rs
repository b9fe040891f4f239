use std::path::PathBuf;
use std::process::Command;

use nsch_cli::config::{help_text, parse_config, resolve_dt, DtSpec, InitialSpec, KEYS};
use nsch_core::state::Preset;
use nsch_core::sweep::DEFAULT_SCHEDULE;

const MINIMAL: &str = "\
grid.cells = 16
grid.lengths = 4
initial.preset = uniform
time.t_end = 1
";

fn configs_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn nsch() -> Command {
    Command::new(env!("CARGO_BIN_EXE_nsch"))
}

#[test]
fn minimal_config_gets_documented_defaults() {
    let cfg = parse_config(MINIMAL).unwrap();
    assert_eq!(cfg.cells, vec![16]);
    assert_eq!(cfg.lengths, vec![4.0]);
    assert_eq!((cfg.gamma, cfg.theta, cfg.theta0), (2.0, 1.0, 2.0));
    assert_eq!(cfg.eps, 0.01);
    assert_eq!(cfg.schedule, DEFAULT_SCHEDULE.to_vec());
    assert_eq!(cfg.initial, InitialSpec::Preset(Preset::Uniform { rho: 1.0, c: 0.0 }));
    assert_eq!(cfg.dt, DtSpec::Auto { dt_max: 0.01 });
    assert_eq!(cfg.cfl_safety, 0.5);
    assert!(!cfg.strict_energy && !cfg.frozen_velocity);
}

#[test]
fn small_adiabatic_exponent_is_named() {
    let errs = parse_config(&format!("{MINIMAL}physics.gamma = 1.2\n")).unwrap_err();
    assert_eq!(errs.len(), 1);
    assert!(errs[0].message.contains("γ > 3/2"), "{}", errs[0]);
    assert_eq!(errs[0].line, Some(5));
}

#[test]
fn reversed_thetas_cite_the_thermodynamic_condition() {
    let errs = parse_config(&format!("{MINIMAL}physics.theta = 2\nphysics.theta0 = 1\n")).unwrap_err();
    assert_eq!(errs.len(), 1);
    assert!(errs[0].message.contains("thermodynamic condition 0 < θ < θ0"), "{}", errs[0]);
}

#[test]
fn every_error_is_reported_at_once() {
    let text = "\
grid.dim = 3
grid.cells = 16
physics.gamma = 1
potential.eps = 0.7
solver.tolerance = 1
initial.preset = uniform
initial.seed = 4
initial.c = 0.1
initial.c = 0.2
time.dt = -1
not a pair
";
    let errs = parse_config(text).unwrap_err();
    let joined: Vec<String> = errs.iter().map(|e| e.to_string()).collect();
    let expect = [
        "grid.dim = 3",
        "missing required key `grid.lengths`",
        "γ > 3/2",
        "potential.eps = 0.7",
        "unknown key `solver.tolerance`",
        "not used by preset `uniform`",
        "duplicate key `initial.c`",
        "time.dt = `-1`",
        "missing required key `time.t_end`",
        "expected `section.key = value`",
    ];
    for e in expect {
        assert!(joined.iter().any(|j| j.contains(e)), "missing {e:?} in {joined:#?}");
    }
}

#[test]
fn comments_and_quotes_are_accepted() {
    let text = "# header\n  grid.cells = 8   # trailing\ngrid.lengths = 2\ninitial.preset = \"uniform\"\ntime.t_end = 1\noutput.directory = 'runs/a b'\n";
    let cfg = parse_config(text).unwrap();
    assert_eq!(cfg.directory, "runs/a b");
}

#[test]
fn help_lists_every_key() {
    let help = help_text();
    for k in KEYS {
        assert!(help.contains(k.key), "{} missing from --help-config", k.key);
        assert!(help.contains(k.help), "help text of {} missing", k.key);
    }
    let schedule = KEYS.iter().find(|k| k.key == "potential.schedule").unwrap();
    let parsed: Vec<f64> = schedule.default.unwrap().split(',').map(|s| s.parse().unwrap()).collect();
    assert_eq!(parsed, DEFAULT_SCHEDULE.to_vec());
}

#[test]
fn shipped_configs_parse() {
    let mut n = 0;
    for entry in std::fs::read_dir(configs_dir()).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().and_then(|e| e.to_str()) == Some("cfg") {
            let text = std::fs::read_to_string(&path).unwrap();
            parse_config(&text).unwrap_or_else(|e| panic!("{}: {e:?}", path.display()));
            n += 1;
        }
    }
    assert!(n >= 5);
}

#[test]
fn step_count_lands_on_the_final_time() {
    assert_eq!(resolve_dt(&DtSpec::Fixed(0.3), 1.0, 0.5, 0.0), (0.25, 4));
    assert_eq!(resolve_dt(&DtSpec::Fixed(0.02), 40.0, 0.5, 0.0).1, 2000);
    let (dt, steps) = resolve_dt(&DtSpec::Auto { dt_max: 0.1 }, 1.0, 0.5, 10.0);
    assert_eq!(steps, 20);
    assert!((dt - 0.05).abs() < 1e-15);
}

#[test]
fn exit_codes() {
    let out = nsch().args(["verify-potential", "--theta", "1", "--theta0", "2", "--eps", "0.1"]).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("pass"));

    let out = nsch().args(["run", "--config", "missing.cfg"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.cfg"));

    let cfg = configs_dir().join("uniform_c1.cfg");
    let out = nsch().args(["validate-initial", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("mean-constraint"));

    let out = nsch().arg("frobnicate").output().unwrap();
    assert_eq!(out.status.code(), Some(64));
    let out = nsch().output().unwrap();
    assert_eq!(out.status.code(), Some(64));

    let out = nsch().arg("--help-config").output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("output.strict_energy"));
}

const TINY: &str = "\
grid.cells = 16
grid.lengths = 8
physics.eta = constant:0.5
initial.preset = advection
initial.rho_amplitude = 0.3
initial.amplitude = 0.5
initial.velocity = 0.5
time.t_end = 0.4
time.dt = 0.02
output.snapshot_every = 1
output.strict_energy = true
";

#[test]
fn run_writes_outputs_and_feeds_check_weakform() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("tiny.cfg");
    std::fs::write(&cfg, TINY).unwrap();
    let out_dir = dir.path().join("out");
    let out = nsch().args(["run", "--config"]).arg(&cfg).arg("--out").arg(&out_dir).output().unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["diagnostics.csv", "trajectory.nscht", "config.cfg", "snapshots/c_000000.nschf", "snapshots/rho_000020.nschf"] {
        assert!(out_dir.join(f).exists(), "{f} missing");
    }
    let csv = std::fs::read_to_string(out_dir.join("diagnostics.csv")).unwrap();
    assert!(csv.lines().next().unwrap().starts_with("step[1],time[t],M[M]"), "{}", csv.lines().next().unwrap());
    assert_eq!(csv.lines().count(), 22);

    let out = nsch().args(["check-weakform", "--refinements", "1", "--traj"]).arg(&out_dir).output().unwrap();
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("level 0: stored trajectory"), "{stdout}");
    assert!(stdout.contains("chemical-potential"));
    assert!(matches!(out.status.code(), Some(0) | Some(1)));
}

#[test]
fn sweep_writes_a_report_and_honors_the_thread_cap() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("tiny.cfg");
    std::fs::write(&cfg, format!("{TINY}potential.schedule = 0.1,0.01\n")).unwrap();
    let out_dir = dir.path().join("sweep");
    let out = nsch()
        .env("NSCH_THREADS", "2")
        .args(["sweep", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out_dir)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("on 2 threads"));
    let report = std::fs::read_to_string(out_dir.join("sweep_report.csv")).unwrap();
    assert!(report.starts_with("eps,status,"));
    assert!(report.contains("# cauchy_tail_heuristic"));
    assert!(out_dir.join("member_0_eps_1e-1/diagnostics.csv").exists());

    let out = nsch().env("NSCH_THREADS", "zero").args(["sweep", "--config"]).arg(&cfg).arg("--out").arg(&out_dir).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}
