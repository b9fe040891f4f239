//! Line-oriented run configuration: `section.key = value`, `#` comments.
//!
//! Every problem in a file is collected and reported together. Unknown keys,
//! duplicates and keys that the chosen preset does not use are errors.

use std::collections::BTreeMap;
use std::fmt;

use nsch_core::constitutive::{Coefficient, ViscosityProfile};
use nsch_core::linsolve::{KrylovConfig, NewtonConfig};
use nsch_core::potential::PotentialParams;
use nsch_core::state::Preset;
use nsch_core::stepper::StepConfig;

/// One documented key: name, default (`None` when required) and description.
pub struct KeySpec {
    pub key: &'static str,
    pub default: Option<&'static str>,
    pub help: &'static str,
}

const fn k(key: &'static str, default: Option<&'static str>, help: &'static str) -> KeySpec {
    KeySpec { key, default, help }
}

/// Every accepted key. `--help-config` prints exactly this table.
pub const KEYS: &[KeySpec] = &[
    k("grid.dim", Some("1"), "spatial dimension, 1 or 2"),
    k("grid.cells", None, "cells per axis, e.g. `256` or `64,64`"),
    k("grid.lengths", None, "domain length per axis, e.g. `64` or `32,32`"),
    k("physics.gamma", Some("2"), "adiabatic exponent, must exceed 3/2"),
    k("physics.theta", Some("1"), "entropy coefficient, 0 < theta < theta0"),
    k("physics.theta0", Some("2"), "interaction coefficient"),
    k("physics.eta", Some("constant:1"), "shear viscosity of c: `constant:V` or `rational:LO,HI`"),
    k("physics.lambda", Some("constant:0"), "bulk viscosity of c, same syntax as physics.eta"),
    k("potential.eps", Some("0.01"), "regularization parameter in (0, 1/2) for `run`"),
    k(
        "potential.schedule",
        Some("1e-1,3e-2,1e-2,3e-3,1e-3"),
        "strictly decreasing eps list for `sweep`",
    ),
    k(
        "initial.preset",
        None,
        "uniform | spinodal | bubble | shear | advection | file",
    ),
    k("initial.rho", Some("1"), "background density (all presets except file)"),
    k("initial.c", Some("0"), "concentration (uniform)"),
    k("initial.m_r", Some("0"), "mean concentration (spinodal, shear, advection)"),
    k(
        "initial.amplitude",
        Some("0.001"),
        "concentration perturbation amplitude (spinodal, shear, advection)",
    ),
    k("initial.seed", Some("0"), "noise seed (spinodal)"),
    k("initial.radius", Some("0.25"), "droplet radius as a fraction of the x-length (bubble)"),
    k("initial.width", Some("1"), "interface width (bubble)"),
    k("initial.c_inside", Some("0.8"), "concentration inside the droplet (bubble)"),
    k("initial.c_outside", Some("-0.8"), "concentration outside the droplet (bubble)"),
    k("initial.velocity", Some("0"), "velocity amplitude (shear, advection)"),
    k("initial.rho_amplitude", Some("0"), "density perturbation amplitude (advection)"),
    k("initial.rho_file", None, "density field file in the binary field format (file)"),
    k("initial.c_file", None, "concentration field file in the binary field format (file)"),
    k("time.t_end", None, "final time, positive"),
    k(
        "time.dt",
        Some("auto"),
        "time step, or `auto` for the largest CFL-admissible step capped by time.dt_max",
    ),
    k("time.dt_max", Some("0.01"), "cap on the automatic time step"),
    k("time.cfl_safety", Some("0.5"), "bound on dt * sum_k max|u_k| / h_k, in (0, 1]"),
    k("solver.delta_reg", Some("1e-10"), "density lift in the chemical-potential equation"),
    k("solver.newton_abs_tol", Some("1e-10"), "Newton absolute tolerance (max norm)"),
    k("solver.newton_rel_tol", Some("1e-9"), "Newton relative tolerance"),
    k("solver.newton_max_iter", Some("50"), "Newton iteration cap"),
    k("solver.krylov_tol", Some("1e-12"), "BiCGStab relative tolerance"),
    k("solver.krylov_max_iter", Some("5000"), "BiCGStab iteration cap"),
    k("solver.energy_safety", Some("10"), "safety factor on the calibrated energy tolerance"),
    k("solver.frozen_velocity", Some("false"), "keep u = 0 and rho fixed (phase field only)"),
    k("output.directory", Some("out"), "output directory, created if missing"),
    k(
        "output.snapshot_every",
        Some("0"),
        "write field snapshots and trajectory frames every k steps; 0 keeps only the endpoints",
    ),
    k("output.strict_energy", Some("false"), "abort on the first energy-inequality violation"),
];

/// Keys each preset reads besides `initial.preset`.
fn preset_keys(name: &str) -> Option<&'static [&'static str]> {
    Some(match name {
        "uniform" => &["initial.rho", "initial.c"],
        "spinodal" => &["initial.rho", "initial.m_r", "initial.amplitude", "initial.seed"],
        "bubble" => &[
            "initial.rho",
            "initial.radius",
            "initial.width",
            "initial.c_inside",
            "initial.c_outside",
        ],
        "shear" => &["initial.rho", "initial.m_r", "initial.amplitude", "initial.velocity"],
        "advection" => &[
            "initial.rho",
            "initial.rho_amplitude",
            "initial.m_r",
            "initial.amplitude",
            "initial.velocity",
        ],
        "file" => &["initial.rho_file", "initial.c_file"],
        _ => return None,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(l) => write!(f, "line {l}: {}", self.message),
            None => write!(f, "{}", self.message),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum InitialSpec {
    Preset(Preset),
    Files { rho: String, c: String },
}

#[derive(Debug, Clone, PartialEq)]
pub enum DtSpec {
    Fixed(f64),
    Auto { dt_max: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub cells: Vec<usize>,
    pub lengths: Vec<f64>,
    pub gamma: f64,
    pub theta: f64,
    pub theta0: f64,
    pub eta: Coefficient<f64>,
    pub lambda: Coefficient<f64>,
    pub eps: f64,
    pub schedule: Vec<f64>,
    pub initial: InitialSpec,
    pub t_end: f64,
    pub dt: DtSpec,
    pub cfl_safety: f64,
    pub delta_reg: f64,
    pub newton_abs_tol: f64,
    pub newton_rel_tol: f64,
    pub newton_max_iter: usize,
    pub krylov_tol: f64,
    pub krylov_max_iter: usize,
    pub energy_safety: f64,
    pub frozen_velocity: bool,
    pub directory: String,
    pub snapshot_every: usize,
    pub strict_energy: bool,
}

impl RunConfig {
    pub fn params(&self) -> PotentialParams<f64> {
        PotentialParams {
            theta: self.theta,
            theta0: self.theta0,
            gamma: self.gamma,
        }
    }

    pub fn viscosity(&self) -> nsch_core::Result<ViscosityProfile<f64>> {
        ViscosityProfile::new(self.eta, self.lambda)
    }

    /// Step configuration for a given `dt`.
    pub fn step_config(&self, dt: f64) -> StepConfig<f64> {
        let mut cfg = StepConfig::new(dt);
        cfg.cfl_safety = self.cfl_safety;
        cfg.delta_reg = self.delta_reg;
        cfg.newton = NewtonConfig {
            abs_tol: self.newton_abs_tol,
            rel_tol: self.newton_rel_tol,
            max_iter: self.newton_max_iter,
            krylov: KrylovConfig {
                tol: self.krylov_tol,
                max_iter: self.krylov_max_iter,
                ..cfg.newton.krylov
            },
            ..cfg.newton
        };
        cfg.viscous.tol = self.krylov_tol;
        cfg.viscous.max_iter = self.krylov_max_iter;
        cfg.strict = self.strict_energy;
        cfg.frozen_velocity = self.frozen_velocity;
        cfg.energy_safety = self.energy_safety;
        cfg
    }

    /// Copy with the grid refined `2^level` times per axis.
    pub fn refined(&self, level: u32) -> RunConfig {
        let f = 1usize << level;
        let mut c = self.clone();
        c.cells = self.cells.iter().map(|n| n * f).collect();
        c.dt = match self.dt {
            DtSpec::Fixed(dt) => DtSpec::Fixed(dt / f as f64),
            DtSpec::Auto { dt_max } => DtSpec::Auto { dt_max: dt_max / f as f64 },
        };
        c
    }
}

/// Time step and step count: `steps = ceil(T / dt)` and `dt = T / steps`, so
/// the run ends exactly at `T`. With `auto`, `dt` starts from
/// `min(dt_max, cfl_safety / rate)` where `rate = sum_k max|u0_k| / h_k`.
pub fn resolve_dt(spec: &DtSpec, t_end: f64, cfl_safety: f64, rate: f64) -> (f64, usize) {
    let dt = match *spec {
        DtSpec::Fixed(dt) => dt,
        DtSpec::Auto { dt_max } => {
            if rate > 0.0 {
                dt_max.min(cfl_safety / rate)
            } else {
                dt_max
            }
        }
    };
    let steps = ((t_end / dt) - 1e-9).ceil().max(1.0) as usize;
    (t_end / steps as f64, steps)
}

struct Entry {
    line: usize,
    value: String,
}

struct Reader {
    map: BTreeMap<String, Entry>,
    errors: Vec<ConfigError>,
}

impl Reader {
    fn raw(&self, key: &str) -> Option<(&str, Option<usize>)> {
        if let Some(e) = self.map.get(key) {
            return Some((e.value.as_str(), Some(e.line)));
        }
        KEYS.iter().find(|s| s.key == key).and_then(|s| s.default).map(|d| (d, None))
    }

    fn err(&mut self, line: Option<usize>, msg: String) {
        self.errors.push(ConfigError { line, message: msg });
    }

    fn required(&mut self, key: &str) -> Option<(String, Option<usize>)> {
        match self.raw(key) {
            Some((v, l)) => Some((v.to_string(), l)),
            None => {
                self.err(None, format!("missing required key `{key}`"));
                None
            }
        }
    }

    fn f64(&mut self, key: &str) -> Option<f64> {
        let (v, line) = self.required(key)?;
        match v.parse::<f64>() {
            Ok(x) if x.is_finite() => Some(x),
            _ => {
                self.err(line, format!("`{key}` = `{v}` is not a finite number"));
                None
            }
        }
    }

    fn usize(&mut self, key: &str) -> Option<usize> {
        let (v, line) = self.required(key)?;
        match v.parse::<usize>() {
            Ok(x) => Some(x),
            Err(_) => {
                self.err(line, format!("`{key}` = `{v}` is not a nonnegative integer"));
                None
            }
        }
    }

    fn u64(&mut self, key: &str) -> Option<u64> {
        let (v, line) = self.required(key)?;
        match v.parse::<u64>() {
            Ok(x) => Some(x),
            Err(_) => {
                self.err(line, format!("`{key}` = `{v}` is not a nonnegative integer"));
                None
            }
        }
    }

    fn bool(&mut self, key: &str) -> Option<bool> {
        let (v, line) = self.required(key)?;
        match v.as_str() {
            "true" => Some(true),
            "false" => Some(false),
            _ => {
                self.err(line, format!("`{key}` = `{v}` must be `true` or `false`"));
                None
            }
        }
    }

    fn list<T: std::str::FromStr>(&mut self, key: &str, what: &str) -> Option<Vec<T>> {
        let (v, line) = self.required(key)?;
        let parsed: Result<Vec<T>, _> = v.split(',').map(|s| s.trim().parse::<T>()).collect();
        match parsed {
            Ok(x) if !x.is_empty() => Some(x),
            _ => {
                self.err(line, format!("`{key}` = `{v}` is not a comma-separated list of {what}"));
                None
            }
        }
    }

    fn coefficient(&mut self, key: &str) -> Option<Coefficient<f64>> {
        let (v, line) = self.required(key)?;
        match Coefficient::parse(&v) {
            Ok(c) => Some(c),
            Err(e) => {
                self.err(line, format!("`{key}`: {e}"));
                None
            }
        }
    }

    fn line_of(&self, key: &str) -> Option<usize> {
        self.map.get(key).map(|e| e.line)
    }
}

fn unquote(v: &str) -> &str {
    let v = v.trim();
    if v.len() >= 2 && ((v.starts_with('"') && v.ends_with('"')) || (v.starts_with('\'') && v.ends_with('\''))) {
        &v[1..v.len() - 1]
    } else {
        v
    }
}

/// Parses and validates a configuration; on failure returns every error found.
pub fn parse_config(text: &str) -> Result<RunConfig, Vec<ConfigError>> {
    let mut r = Reader {
        map: BTreeMap::new(),
        errors: Vec::new(),
    };
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let body = match raw.find('#') {
            Some(p) => &raw[..p],
            None => raw,
        }
        .trim();
        if body.is_empty() {
            continue;
        }
        let Some((key, value)) = body.split_once('=') else {
            r.err(Some(line), format!("expected `section.key = value`, found `{body}`"));
            continue;
        };
        let key = key.trim();
        if !KEYS.iter().any(|s| s.key == key) {
            r.err(Some(line), format!("unknown key `{key}` (see --help-config)"));
            continue;
        }
        let value = unquote(value).to_string();
        if value.is_empty() {
            r.err(Some(line), format!("`{key}` has an empty value"));
            continue;
        }
        if let Some(prev) = r.map.get(key) {
            let msg = format!("duplicate key `{key}` (first set on line {})", prev.line);
            r.err(Some(line), msg);
            continue;
        }
        r.map.insert(key.to_string(), Entry { line, value });
    }

    let dim = r.usize("grid.dim");
    let cells: Option<Vec<usize>> = r.list("grid.cells", "integers");
    let lengths: Option<Vec<f64>> = r.list("grid.lengths", "numbers");
    if let Some(d) = dim {
        if !(1..=2).contains(&d) {
            let l = r.line_of("grid.dim");
            r.err(l, format!("grid.dim = {d} must be 1 or 2"));
        } else {
            if let Some(c) = &cells {
                if c.len() != d || c.iter().any(|&n| n < 2) {
                    let l = r.line_of("grid.cells");
                    r.err(l, format!("grid.cells needs {d} entries, each at least 2"));
                }
            }
            if let Some(ls) = &lengths {
                if ls.len() != d || ls.iter().any(|&x| !(x > 0.0 && x.is_finite())) {
                    let l = r.line_of("grid.lengths");
                    r.err(l, format!("grid.lengths needs {d} positive entries"));
                }
            }
        }
    }

    let gamma = r.f64("physics.gamma");
    let theta = r.f64("physics.theta");
    let theta0 = r.f64("physics.theta0");
    if let Some(g) = gamma {
        if !(g > 1.5) {
            let l = r.line_of("physics.gamma");
            r.err(l, format!("physics.gamma = {g} violates the adiabatic-exponent condition γ > 3/2"));
        }
    }
    if let (Some(t), Some(t0)) = (theta, theta0) {
        if !(t > 0.0 && t < t0) {
            let l = r.line_of("physics.theta").or(r.line_of("physics.theta0"));
            r.err(
                l,
                format!("theta = {t}, theta0 = {t0} violate the thermodynamic condition 0 < θ < θ0"),
            );
        }
    }
    let eta = r.coefficient("physics.eta");
    let lambda = r.coefficient("physics.lambda");
    if let (Some(e), Some(lm)) = (eta, lambda) {
        if let Err(err) = ViscosityProfile::new(e, lm) {
            let l = r.line_of("physics.eta").or(r.line_of("physics.lambda"));
            r.err(l, format!("viscosity: {err}"));
        }
    }

    let eps = r.f64("potential.eps");
    if let Some(e) = eps {
        if !(e > 0.0 && e < 0.5) {
            let l = r.line_of("potential.eps");
            r.err(l, format!("potential.eps = {e} must lie in (0, 1/2)"));
        }
    }
    let schedule: Option<Vec<f64>> = r.list("potential.schedule", "numbers");
    if let Some(s) = &schedule {
        if let Err(e) = nsch_core::sweep::SweepPlan::new(s.clone()) {
            let l = r.line_of("potential.schedule");
            r.err(l, format!("potential.schedule: {e}"));
        }
    }

    let initial = parse_initial(&mut r);

    let t_end = r.f64("time.t_end");
    if let Some(t) = t_end {
        if !(t > 0.0) {
            let l = r.line_of("time.t_end");
            r.err(l, format!("time.t_end = {t} must be positive"));
        }
    }
    let dt_raw = r.required("time.dt");
    let dt_max = r.f64("time.dt_max");
    let dt = match dt_raw {
        Some((v, line)) if v == "auto" => match dt_max {
            Some(m) if m > 0.0 => Some(DtSpec::Auto { dt_max: m }),
            Some(m) => {
                let l = r.line_of("time.dt_max");
                r.err(l.or(line), format!("time.dt_max = {m} must be positive"));
                None
            }
            None => None,
        },
        Some((v, line)) => match v.parse::<f64>() {
            Ok(x) if x > 0.0 && x.is_finite() => {
                if r.line_of("time.dt_max").is_some() {
                    r.err(r.line_of("time.dt_max"), "time.dt_max is only used with time.dt = auto".into());
                }
                Some(DtSpec::Fixed(x))
            }
            _ => {
                r.err(line, format!("time.dt = `{v}` must be a positive number or `auto`"));
                None
            }
        },
        None => None,
    };
    let cfl_safety = r.f64("time.cfl_safety");
    if let Some(c) = cfl_safety {
        if !(c > 0.0 && c <= 1.0) {
            let l = r.line_of("time.cfl_safety");
            r.err(l, format!("time.cfl_safety = {c} must lie in (0, 1]"));
        }
    }

    let delta_reg = r.f64("solver.delta_reg");
    let newton_abs_tol = r.f64("solver.newton_abs_tol");
    let newton_rel_tol = r.f64("solver.newton_rel_tol");
    let newton_max_iter = r.usize("solver.newton_max_iter");
    let krylov_tol = r.f64("solver.krylov_tol");
    let krylov_max_iter = r.usize("solver.krylov_max_iter");
    let energy_safety = r.f64("solver.energy_safety");
    let frozen_velocity = r.bool("solver.frozen_velocity");
    for (key, v) in [
        ("solver.delta_reg", delta_reg),
        ("solver.newton_abs_tol", newton_abs_tol),
        ("solver.newton_rel_tol", newton_rel_tol),
        ("solver.krylov_tol", krylov_tol),
    ] {
        if let Some(x) = v {
            if !(x > 0.0) {
                let l = r.line_of(key);
                r.err(l, format!("{key} = {x} must be positive"));
            }
        }
    }
    for (key, v) in [("solver.newton_max_iter", newton_max_iter), ("solver.krylov_max_iter", krylov_max_iter)] {
        if v == Some(0) {
            let l = r.line_of(key);
            r.err(l, format!("{key} must be at least 1"));
        }
    }
    if let Some(x) = energy_safety {
        if !(x >= 0.0) {
            let l = r.line_of("solver.energy_safety");
            r.err(l, format!("solver.energy_safety = {x} must be nonnegative"));
        }
    }

    let directory = r.required("output.directory").map(|(v, _)| v);
    let snapshot_every = r.usize("output.snapshot_every");
    let strict_energy = r.bool("output.strict_energy");

    if !r.errors.is_empty() {
        r.errors.sort_by_key(|e| e.line.unwrap_or(usize::MAX));
        return Err(r.errors);
    }
    // every field parsed once no error was recorded
    Ok(RunConfig {
        cells: cells.unwrap(),
        lengths: lengths.unwrap(),
        gamma: gamma.unwrap(),
        theta: theta.unwrap(),
        theta0: theta0.unwrap(),
        eta: eta.unwrap(),
        lambda: lambda.unwrap(),
        eps: eps.unwrap(),
        schedule: schedule.unwrap(),
        initial: initial.unwrap(),
        t_end: t_end.unwrap(),
        dt: dt.unwrap(),
        cfl_safety: cfl_safety.unwrap(),
        delta_reg: delta_reg.unwrap(),
        newton_abs_tol: newton_abs_tol.unwrap(),
        newton_rel_tol: newton_rel_tol.unwrap(),
        newton_max_iter: newton_max_iter.unwrap(),
        krylov_tol: krylov_tol.unwrap(),
        krylov_max_iter: krylov_max_iter.unwrap(),
        energy_safety: energy_safety.unwrap(),
        frozen_velocity: frozen_velocity.unwrap(),
        directory: directory.unwrap(),
        snapshot_every: snapshot_every.unwrap(),
        strict_energy: strict_energy.unwrap(),
    })
}

fn parse_initial(r: &mut Reader) -> Option<InitialSpec> {
    let (name, line) = r.required("initial.preset")?;
    let Some(used) = preset_keys(&name) else {
        r.err(line, format!("unknown preset `{name}`"));
        return None;
    };
    let stray: Vec<(String, usize)> = r
        .map
        .iter()
        .filter(|(k, _)| k.starts_with("initial.") && *k != "initial.preset" && !used.contains(&k.as_str()))
        .map(|(k, e)| (k.clone(), e.line))
        .collect();
    for (key, l) in stray {
        r.err(Some(l), format!("`{key}` is not used by preset `{name}`"));
    }
    let spec = match name.as_str() {
        "uniform" => Preset::Uniform {
            rho: r.f64("initial.rho")?,
            c: r.f64("initial.c")?,
        },
        "spinodal" => Preset::Spinodal {
            rho: r.f64("initial.rho")?,
            m_r: r.f64("initial.m_r")?,
            amplitude: r.f64("initial.amplitude")?,
            seed: r.u64("initial.seed")?,
        },
        "bubble" => Preset::Bubble {
            rho: r.f64("initial.rho")?,
            radius: r.f64("initial.radius")?,
            width: r.f64("initial.width")?,
            c_inside: r.f64("initial.c_inside")?,
            c_outside: r.f64("initial.c_outside")?,
        },
        "shear" => Preset::Shear {
            rho: r.f64("initial.rho")?,
            m_r: r.f64("initial.m_r")?,
            amplitude: r.f64("initial.amplitude")?,
            velocity: r.f64("initial.velocity")?,
        },
        "advection" => Preset::Advection {
            rho: r.f64("initial.rho")?,
            rho_amplitude: r.f64("initial.rho_amplitude")?,
            m_r: r.f64("initial.m_r")?,
            amplitude: r.f64("initial.amplitude")?,
            velocity: r.f64("initial.velocity")?,
        },
        _ => {
            let rho = r.required("initial.rho_file").map(|v| v.0);
            let c = r.required("initial.c_file").map(|v| v.0);
            return Some(InitialSpec::Files { rho: rho?, c: c? });
        }
    };
    Some(InitialSpec::Preset(spec))
}

/// The `--help-config` text.
pub fn help_text() -> String {
    let mut s = String::from(
        "Configuration files hold one `section.key = value` per line; `#` starts a comment.\n\
         Unknown keys are errors. Keys marked (required) have no default.\n\n",
    );
    let mut section = "";
    for spec in KEYS {
        let sec = spec.key.split('.').next().unwrap_or("");
        if sec != section {
            s.push_str(&format!("[{sec}]\n"));
            section = sec;
        }
        let default = match spec.default {
            Some(d) => format!("default {d}"),
            None => "(required)".to_string(),
        };
        s.push_str(&format!("  {:<26} {:<34} {}\n", spec.key, default, spec.help));
    }
    s
}
