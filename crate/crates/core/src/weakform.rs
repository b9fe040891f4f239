//! Post-hoc audit of a stored trajectory against the integral identities a
//! weak solution satisfies, plus the time-integrated energy inequality.
//!
//! Test functions are separable, `psi(t) phi(x)`, with `psi` a smooth bump
//! and `phi` a polynomial in coordinates normalized to `[0, 1]`. Space
//! integrals use the midpoint rule on cells (or faces, for face-located
//! quantities) and time integrals the trapezoid rule over the stored frames.

use std::io::{Read, Write};

use crate::constitutive::{cell_gradient, ViscousForm};
use crate::diagnostics::DiagnosticsRecord;
use crate::error::{Error, Result};
use crate::grid::io::{read_f64, read_grid, read_u64, read_values, write_grid, write_values};
use crate::grid::{divergence, gradient, Grid, ScalarBc, ScalarField, VectorField};
use crate::real::Real;
use crate::state::State;
use crate::stepper::Physics;

pub const TRAJECTORY_MAGIC: &[u8; 6] = b"NSCHT1";

/// Frames of one run, uniformly spaced in time.
#[derive(Debug, Clone)]
pub struct Trajectory<T> {
    pub frames: Vec<State<T>>,
}

impl<T: Real> Trajectory<T> {
    pub fn new(frames: Vec<State<T>>) -> Result<Self> {
        let t = Self { frames };
        t.validate()?;
        Ok(t)
    }

    pub fn grid(&self) -> &Grid<T> {
        self.frames[0].grid()
    }

    pub fn times(&self) -> Vec<T> {
        self.frames.iter().map(|f| f.time).collect()
    }

    pub fn final_time(&self) -> T {
        self.frames[self.frames.len() - 1].time
    }

    /// At least two frames on one grid, with equal time spacing.
    pub fn validate(&self) -> Result<()> {
        if self.frames.len() < 2 {
            return Err(Error::Trajectory(format!("need at least 2 frames, got {}", self.frames.len())));
        }
        let g = *self.frames[0].grid();
        let dt = self.frames[1].time - self.frames[0].time;
        if !(dt > T::zero()) {
            return Err(Error::Trajectory("frame times must increase".into()));
        }
        for (n, w) in self.frames.windows(2).enumerate() {
            if w[1].grid() != &g {
                return Err(Error::Trajectory(format!("frame {} is on a different grid", n + 1)));
            }
            let d = w[1].time - w[0].time;
            if (d - dt).abs() > T::lit(1e-9) * dt.max(w[1].time.abs() * T::epsilon() * T::lit(1e6)) {
                return Err(Error::Trajectory(format!("frame spacing not uniform at frame {}", n + 1)));
            }
        }
        Ok(())
    }

    /// Binary layout (little-endian): magic `NSCHT1`, grid header as in field
    /// files, `u64` frame count, then per frame `f64` time, `f64` eps and the
    /// values of `rho`, `u_x`, `u_y` (2D only), `c`, `mu`.
    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(TRAJECTORY_MAGIC)?;
        write_grid(self.grid(), &mut w)?;
        w.write_all(&(self.frames.len() as u64).to_le_bytes())?;
        for f in &self.frames {
            write_frame(f, &mut w)?;
        }
        Ok(())
    }

    pub fn read<R: Read>(mut r: R) -> Result<Self> {
        let (grid, n) = read_header(&mut r)?;
        let frames = (0..n).map(|_| read_frame(&grid, &mut r)).collect::<Result<Vec<_>>>()?;
        Self::new(frames)
    }
}

/// Incremental trajectory writer for streaming frames to disk.
pub struct TrajectoryWriter<W: Write + std::io::Seek> {
    out: W,
    count: u64,
    count_pos: u64,
}

impl<W: Write + std::io::Seek> TrajectoryWriter<W> {
    pub fn new<T: Real>(mut out: W, grid: &Grid<T>) -> Result<Self> {
        out.write_all(TRAJECTORY_MAGIC)?;
        write_grid(grid, &mut out)?;
        let count_pos = out.stream_position()?;
        out.write_all(&0u64.to_le_bytes())?;
        Ok(Self { out, count: 0, count_pos })
    }

    pub fn push<T: Real>(&mut self, frame: &State<T>) -> Result<()> {
        write_frame(frame, &mut self.out)?;
        self.count += 1;
        Ok(())
    }

    pub fn finish(mut self) -> Result<W> {
        use std::io::SeekFrom;
        let end = self.out.stream_position()?;
        self.out.seek(SeekFrom::Start(self.count_pos))?;
        self.out.write_all(&self.count.to_le_bytes())?;
        self.out.seek(SeekFrom::Start(end))?;
        self.out.flush()?;
        Ok(self.out)
    }
}

fn write_frame<T: Real, W: Write>(f: &State<T>, w: &mut W) -> Result<()> {
    w.write_all(&f.time.to_f64_lossy().to_le_bytes())?;
    w.write_all(&f.eps.to_f64_lossy().to_le_bytes())?;
    write_values(f.rho.values(), w)?;
    for axis in 0..f.grid().dim() {
        write_values(f.u.comp(axis), w)?;
    }
    write_values(f.c.values(), w)?;
    write_values(f.mu.values(), w)
}

fn read_header<T: Real, R: Read>(r: &mut R) -> Result<(Grid<T>, usize)> {
    let mut magic = [0u8; 6];
    r.read_exact(&mut magic)?;
    if &magic != TRAJECTORY_MAGIC {
        return Err(Error::Format("bad trajectory magic".into()));
    }
    let grid = read_grid(r)?;
    let n = read_u64(r)? as usize;
    Ok((grid, n))
}

fn read_frame<T: Real, R: Read>(g: &Grid<T>, r: &mut R) -> Result<State<T>> {
    let time = T::lit(read_f64(r)?);
    let eps = T::lit(read_f64(r)?);
    let nb = ScalarBc::NeumannZero;
    let rho = ScalarField::new(*g, read_values(g.n_cells(), r)?, nb)?;
    let mut flat = read_values(g.n_faces(0), r)?;
    if g.dim() == 2 {
        flat.extend(read_values::<T, _>(g.n_faces(1), r)?);
    }
    let u = VectorField::from_flat(*g, &flat)?;
    let c = ScalarField::new(*g, read_values(g.n_cells(), r)?, nb)?;
    let mu = ScalarField::new(*g, read_values(g.n_cells(), r)?, nb)?;
    Ok(State { rho, u, c, mu, time, eps })
}

/// Smooth compactly supported time factor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TimeBump {
    /// `exp(-1/(1 - s^2))`, `s = 2t/T0 - 1`, on `(0, T0)`: vanishes at `t = 0`.
    Interior { t0: f64 },
    /// `exp(-1/(1 - s^2))`, `s = t/T0`, on `[0, T0)`: equals `1/e` at `t = 0`.
    Initial { t0: f64 },
}

impl TimeBump {
    pub fn support_end(&self) -> f64 {
        match *self {
            TimeBump::Interior { t0 } | TimeBump::Initial { t0 } => t0,
        }
    }

    fn arg(&self, t: f64) -> (f64, f64) {
        match *self {
            TimeBump::Interior { t0 } => (2.0 * t / t0 - 1.0, 2.0 / t0),
            TimeBump::Initial { t0 } => (t / t0, 1.0 / t0),
        }
    }

    pub fn value(&self, t: f64) -> f64 {
        let (s, _) = self.arg(t);
        if s.abs() >= 1.0 || t < 0.0 {
            0.0
        } else {
            (-1.0 / (1.0 - s * s)).exp()
        }
    }

    pub fn derivative(&self, t: f64) -> f64 {
        let (s, ds) = self.arg(t);
        if s.abs() >= 1.0 || t < 0.0 {
            0.0
        } else {
            let q = 1.0 - s * s;
            (-1.0 / q).exp() * (-2.0 * s / (q * q)) * ds
        }
    }

    /// The support must end strictly before the final time `t_end`.
    pub fn check(&self, t_end: f64) -> Result<()> {
        let t0 = self.support_end();
        if !(t0 > 0.0 && t0 < t_end) {
            return Err(Error::TestFunction(format!(
                "time bump support [0, {t0}] must end inside (0, {t_end})"
            )));
        }
        Ok(())
    }
}

/// Polynomial `sum coef * xi^a * eta^b` in normalized coordinates
/// `xi = x / Lx`, `eta = y / Ly`.
#[derive(Debug, Clone, PartialEq)]
pub struct Polynomial {
    pub terms: Vec<(f64, u32, u32)>,
}

impl Polynomial {
    pub fn new(terms: Vec<(f64, u32, u32)>) -> Self {
        Self { terms }
    }

    pub fn constant(v: f64) -> Self {
        Self::new(vec![(v, 0, 0)])
    }

    pub fn product(&self, other: &Polynomial) -> Polynomial {
        let mut terms = Vec::with_capacity(self.terms.len() * other.terms.len());
        for &(a, ax, ay) in &self.terms {
            for &(b, bx, by) in &other.terms {
                terms.push((a * b, ax + bx, ay + by));
            }
        }
        Polynomial { terms }
    }

    pub fn scaled(&self, alpha: f64) -> Polynomial {
        Polynomial {
            terms: self.terms.iter().map(|&(c, a, b)| (alpha * c, a, b)).collect(),
        }
    }

    /// `xi (1 - xi)`, times `eta (1 - eta)` in 2D: zero on every wall.
    pub fn wall_bubble(dim: usize) -> Polynomial {
        let px = Polynomial::new(vec![(1.0, 1, 0), (-1.0, 2, 0)]);
        if dim == 1 {
            px
        } else {
            px.product(&Polynomial::new(vec![(1.0, 0, 1), (-1.0, 0, 2)]))
        }
    }

    fn pw(v: f64, e: u32) -> f64 {
        v.powi(e as i32)
    }

    pub fn value(&self, x: f64, y: f64, len: [f64; 2]) -> f64 {
        let (xi, eta) = (x / len[0], y / len[1]);
        self.terms.iter().map(|&(c, a, b)| c * Self::pw(xi, a) * Self::pw(eta, b)).sum()
    }

    pub fn gradient(&self, x: f64, y: f64, len: [f64; 2]) -> [f64; 2] {
        let (xi, eta) = (x / len[0], y / len[1]);
        let mut g = [0.0; 2];
        for &(c, a, b) in &self.terms {
            if a > 0 {
                g[0] += c * a as f64 * Self::pw(xi, a - 1) * Self::pw(eta, b) / len[0];
            }
            if b > 0 {
                g[1] += c * b as f64 * Self::pw(xi, a) * Self::pw(eta, b - 1) / len[1];
            }
        }
        g
    }

    fn max_coef(&self) -> f64 {
        self.terms.iter().fold(0.0f64, |m, t| m.max(t.0.abs()))
    }
}

/// Scalar test `psi(t) phi(x)`; no boundary condition is required.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarTest {
    pub psi: TimeBump,
    pub phi: Polynomial,
}

impl ScalarTest {
    pub fn scaled(&self, alpha: f64) -> Self {
        Self {
            psi: self.psi,
            phi: self.phi.scaled(alpha),
        }
    }
}

/// Vector test `psi(t) phi(x)` for the momentum identity; every component
/// must vanish on the walls.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorTest {
    pub psi: TimeBump,
    pub phi: [Polynomial; 2],
}

impl VectorTest {
    /// Component-wise `wall_bubble * base`.
    pub fn vanishing(dim: usize, psi: TimeBump, base: [Polynomial; 2]) -> Self {
        let b = Polynomial::wall_bubble(dim);
        Self {
            psi,
            phi: [b.product(&base[0]), b.product(&base[1])],
        }
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        Self {
            psi: self.psi,
            phi: [self.phi[0].scaled(alpha), self.phi[1].scaled(alpha)],
        }
    }

    /// Samples each wall and rejects a nonzero trace.
    pub fn check_boundary(&self, dim: usize, len: [f64; 2]) -> Result<()> {
        const SAMPLES: usize = 33;
        for (k, p) in self.phi.iter().enumerate().take(dim) {
            let tol = 1e-13 * p.max_coef().max(1.0);
            let mut pts = Vec::new();
            if dim == 1 {
                pts.push((0.0, 0.0));
                pts.push((len[0], 0.0));
            } else {
                for s in 0..SAMPLES {
                    let a = s as f64 / (SAMPLES - 1) as f64;
                    pts.extend([(0.0, a * len[1]), (len[0], a * len[1]), (a * len[0], 0.0), (a * len[0], len[1])]);
                }
            }
            for (x, y) in pts {
                let v = p.value(x, y, len);
                if v.abs() > tol {
                    return Err(Error::TestFunction(format!(
                        "momentum test component {k} is {v} at ({x}, {y}); it must vanish on the boundary"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Renormalization pair `(b, B)` with `B(r) = B(1) + int_1^r b(z)/z^2 dz`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RenormPair {
    /// `b = 0`, `B = 1`: the plain continuity equation.
    Plain,
    /// `b(z) = min(z, k)` with `B(1) = 0`, `k >= 1`.
    Truncation { k: f64 },
}

impl RenormPair {
    pub fn name(&self) -> String {
        match self {
            RenormPair::Plain => "b=0,B=1".into(),
            RenormPair::Truncation { k } => format!("b=min(z,{k})"),
        }
    }

    pub fn b(&self, z: f64) -> f64 {
        match *self {
            RenormPair::Plain => 0.0,
            RenormPair::Truncation { k } => z.min(k),
        }
    }

    /// Closed form: `ln r` for `r <= k`, `ln k + 1 - k/r` above.
    pub fn big_b(&self, r: f64) -> f64 {
        match *self {
            RenormPair::Plain => 1.0,
            RenormPair::Truncation { k } => {
                if r <= k {
                    r.ln()
                } else {
                    k.ln() + 1.0 - k / r
                }
            }
        }
    }

    /// `B(1)`.
    pub fn anchor(&self) -> f64 {
        match self {
            RenormPair::Plain => 1.0,
            RenormPair::Truncation { .. } => 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            RenormPair::Truncation { k } if !(k >= 1.0 && k.is_finite()) => {
                Err(Error::TestFunction(format!("truncation level k = {k} must be >= 1")))
            }
            _ => Ok(()),
        }
    }

    /// The pairs used by the audit.
    pub fn library() -> [RenormPair; 3] {
        [RenormPair::Plain, RenormPair::Truncation { k: 1.0 }, RenormPair::Truncation { k: 2.0 }]
    }
}

fn len2<T: Real>(g: &Grid<T>) -> [f64; 2] {
    let l = g.lengths();
    [l[0].to_f64_lossy(), if g.dim() == 2 { l[1].to_f64_lossy() } else { 1.0 }]
}

fn centers<T: Real>(g: &Grid<T>) -> Vec<[f64; 2]> {
    (0..g.n_cells())
        .map(|k| {
            let [x, y] = g.cell_center_of(k);
            [x.to_f64_lossy(), y.to_f64_lossy()]
        })
        .collect()
}

fn face_points<T: Real>(g: &Grid<T>, axis: usize) -> Vec<[f64; 2]> {
    (0..g.n_faces(axis))
        .map(|k| {
            let [x, y] = g.face_center(axis, k);
            [x.to_f64_lossy(), y.to_f64_lossy()]
        })
        .collect()
}

/// Trapezoid weights for the frame times.
fn trapezoid(times: &[f64]) -> Vec<f64> {
    let n = times.len();
    let mut w = vec![0.0; n];
    for k in 0..n - 1 {
        let h = 0.5 * (times[k + 1] - times[k]);
        w[k] += h;
        w[k + 1] += h;
    }
    w
}

fn f64s<T: Real>(v: &[T]) -> Vec<f64> {
    v.iter().map(|x| x.to_f64_lossy()).collect()
}

/// `sum_faces vol g_f d_axis phi(x_f)` for a face gradient `g`.
fn face_pairing<T: Real>(grad: &VectorField<T>, phi: &Polynomial, len: [f64; 2]) -> f64 {
    let g = grad.grid();
    let vol = g.cell_volume().to_f64_lossy();
    let mut s = 0.0;
    for axis in 0..g.dim() {
        for (k, p) in face_points(g, axis).into_iter().enumerate() {
            s += grad.comp(axis)[k].to_f64_lossy() * phi.gradient(p[0], p[1], len)[axis];
        }
    }
    s * vol
}

fn prepare<T: Real>(traj: &Trajectory<T>, psi: &TimeBump) -> Result<(Vec<f64>, Vec<f64>)> {
    traj.validate()?;
    let times = f64s(&traj.times());
    psi.check(times[times.len() - 1])?;
    let w = trapezoid(&times);
    Ok((times, w))
}

/// `|[int rho B(rho) phi]_0^T - int int rho B(rho)(d_t phi + u . grad phi) - b(rho) div u phi|`.
pub fn residual_renormalized_continuity<T: Real>(traj: &Trajectory<T>, pair: RenormPair, test: &ScalarTest) -> Result<f64> {
    pair.validate()?;
    let (times, w) = prepare(traj, &test.psi)?;
    let g = traj.grid();
    let len = len2(g);
    let vol = g.cell_volume().to_f64_lossy();
    let xs = centers(g);
    let phi: Vec<f64> = xs.iter().map(|p| test.phi.value(p[0], p[1], len)).collect();
    let dphi: Vec<[f64; 2]> = xs.iter().map(|p| test.phi.gradient(p[0], p[1], len)).collect();
    let bracket = |f: &State<T>, t: f64| -> f64 {
        let psi = test.psi.value(t);
        f.rho
            .values()
            .iter()
            .zip(&phi)
            .map(|(r, p)| {
                let r = r.to_f64_lossy();
                r * pair.big_b(r) * p * psi
            })
            .sum::<f64>()
            * vol
    };
    let n = traj.frames.len();
    let lhs = bracket(&traj.frames[n - 1], times[n - 1]) - bracket(&traj.frames[0], times[0]);
    let mut rhs = 0.0;
    for (f, (&t, &wt)) in traj.frames.iter().zip(times.iter().zip(&w)) {
        let (psi, dpsi) = (test.psi.value(t), test.psi.derivative(t));
        if psi == 0.0 && dpsi == 0.0 {
            continue;
        }
        let uc = f.u.to_cells();
        let div = divergence(&f.u);
        let mut s = 0.0;
        for k in 0..g.n_cells() {
            let r = f.rho.values()[k].to_f64_lossy();
            let u = [uc[k][0].to_f64_lossy(), uc[k][1].to_f64_lossy()];
            let udphi = u[0] * dphi[k][0] + u[1] * dphi[k][1];
            s += r * pair.big_b(r) * (dpsi * phi[k] + psi * udphi) - pair.b(r) * div.values()[k].to_f64_lossy() * psi * phi[k];
        }
        rhs += wt * s * vol;
    }
    Ok((lhs - rhs).abs())
}

/// Residual of the momentum identity, including pressure, viscous and
/// capillary terms.
pub fn residual_momentum<T: Real>(traj: &Trajectory<T>, physics: &Physics<T>, test: &VectorTest) -> Result<f64> {
    let (times, w) = prepare(traj, &test.psi)?;
    let g = *traj.grid();
    let dim = g.dim();
    let len = len2(&g);
    test.check_boundary(dim, len)?;
    let vol = g.cell_volume().to_f64_lossy();
    let gamma = physics.params.gamma.to_f64_lossy();
    let xs = centers(&g);
    // phi sampled on faces (x-faces then y-faces) and its gradient at cell centers
    let mut phi_faces = Vec::new();
    for axis in 0..dim {
        for p in face_points(&g, axis) {
            phi_faces.push(test.phi[axis].value(p[0], p[1], len));
        }
    }
    let phi_flat: Vec<T> = phi_faces.iter().map(|&v| T::lit(v)).collect();
    let grad_phi: Vec<[[f64; 2]; 2]> = xs
        .iter()
        .map(|p| [test.phi[0].gradient(p[0], p[1], len), test.phi[1].gradient(p[0], p[1], len)])
        .collect();

    let face_momentum = |f: &State<T>| -> f64 {
        // rho on faces times u times phi, summed over faces
        let rf = crate::grid::face_average(&f.rho);
        let mut s = 0.0;
        let mut off = 0;
        for axis in 0..dim {
            for k in 0..g.n_faces(axis) {
                s += rf.comp(axis)[k].to_f64_lossy() * f.u.comp(axis)[k].to_f64_lossy() * phi_faces[off + k];
            }
            off += g.n_faces(axis);
        }
        s * vol
    };
    let n = traj.frames.len();
    let lhs = test.psi.value(times[n - 1]) * face_momentum(&traj.frames[n - 1]) - test.psi.value(times[0]) * face_momentum(&traj.frames[0]);
    let mut rhs = 0.0;
    for (f, (&t, &wt)) in traj.frames.iter().zip(times.iter().zip(&w)) {
        let (psi, dpsi) = (test.psi.value(t), test.psi.derivative(t));
        if psi == 0.0 && dpsi == 0.0 {
            continue;
        }
        let mut s = dpsi * face_momentum(f);
        let uc = f.u.to_cells();
        let gc = cell_gradient(&f.c);
        let mut cells = 0.0;
        for k in 0..g.n_cells() {
            let r = f.rho.values()[k].to_f64_lossy();
            let u = [uc[k][0].to_f64_lossy(), uc[k][1].to_f64_lossy()];
            let gp = &grad_phi[k];
            let div_phi = gp[0][0] + if dim == 2 { gp[1][1] } else { 0.0 };
            // (rho u (x) u) : grad phi, with grad phi[a][b] = d_b phi_a
            let mut conv = 0.0;
            let mut kort = 0.0;
            let gck = [gc[k][0].to_f64_lossy(), gc[k][1].to_f64_lossy()];
            for a in 0..dim {
                for b in 0..dim {
                    conv += r * u[a] * u[b] * gp[a][b];
                    kort += gck[a] * gck[b] * gp[a][b];
                }
            }
            let half_sq = 0.5 * (gck[0] * gck[0] + gck[1] * gck[1]);
            let p = r.powf(gamma);
            cells += conv + p * div_phi + kort - half_sq * div_phi;
        }
        s += psi * cells * vol;
        // viscous term through the scheme's own bilinear form
        let q = ViscousForm::new(&f.c, &physics.viscosity).matrix();
        let qu = q.matvec(&f.u.to_flat());
        let visc: f64 = qu.iter().zip(&phi_flat).map(|(a, b)| a.to_f64_lossy() * b.to_f64_lossy()).sum();
        s -= psi * visc;
        rhs += wt * s;
    }
    Ok((lhs - rhs).abs())
}

/// `|[int rho c phi]_0^T - int int rho c (d_t phi + u . grad phi) - grad mu . grad phi|`.
pub fn residual_concentration<T: Real>(traj: &Trajectory<T>, test: &ScalarTest) -> Result<f64> {
    let (times, w) = prepare(traj, &test.psi)?;
    let g = *traj.grid();
    let len = len2(&g);
    let vol = g.cell_volume().to_f64_lossy();
    let xs = centers(&g);
    let phi: Vec<f64> = xs.iter().map(|p| test.phi.value(p[0], p[1], len)).collect();
    let dphi: Vec<[f64; 2]> = xs.iter().map(|p| test.phi.gradient(p[0], p[1], len)).collect();
    let mass = |f: &State<T>| -> f64 {
        (0..g.n_cells())
            .map(|k| f.rho.values()[k].to_f64_lossy() * f.c.values()[k].to_f64_lossy() * phi[k])
            .sum::<f64>()
            * vol
    };
    let n = traj.frames.len();
    let lhs = test.psi.value(times[n - 1]) * mass(&traj.frames[n - 1]) - test.psi.value(times[0]) * mass(&traj.frames[0]);
    let mut rhs = 0.0;
    for (f, (&t, &wt)) in traj.frames.iter().zip(times.iter().zip(&w)) {
        let (psi, dpsi) = (test.psi.value(t), test.psi.derivative(t));
        if psi == 0.0 && dpsi == 0.0 {
            continue;
        }
        let uc = f.u.to_cells();
        let mut s = 0.0;
        for k in 0..g.n_cells() {
            let rc = f.rho.values()[k].to_f64_lossy() * f.c.values()[k].to_f64_lossy();
            let u = [uc[k][0].to_f64_lossy(), uc[k][1].to_f64_lossy()];
            s += rc * (dpsi * phi[k] + psi * (u[0] * dphi[k][0] + u[1] * dphi[k][1]));
        }
        s *= vol;
        s -= psi * face_pairing(&gradient(&f.mu), &test.phi, len);
        rhs += wt * s;
    }
    Ok((lhs - rhs).abs())
}

/// `|int int rho mu phi - rho F'_eps(c) phi + theta0 rho c phi - grad c . grad phi|`.
/// On vacuum cells `rho F'_eps(c)` is taken as zero.
pub fn residual_chemical_potential<T: Real>(traj: &Trajectory<T>, physics: &Physics<T>, test: &ScalarTest) -> Result<f64> {
    let (times, w) = prepare(traj, &test.psi)?;
    let g = *traj.grid();
    let len = len2(&g);
    let vol = g.cell_volume().to_f64_lossy();
    let theta0 = physics.params.theta0.to_f64_lossy();
    let phi: Vec<f64> = centers(&g).iter().map(|p| test.phi.value(p[0], p[1], len)).collect();
    let mut total = 0.0;
    for (f, (&t, &wt)) in traj.frames.iter().zip(times.iter().zip(&w)) {
        let psi = test.psi.value(t);
        if psi == 0.0 {
            continue;
        }
        let mut s = 0.0;
        for k in 0..g.n_cells() {
            let r = f.rho.values()[k].to_f64_lossy();
            let c = f.c.values()[k];
            let rfp = if r == 0.0 { 0.0 } else { r * physics.reg.prime(c).to_f64_lossy() };
            let mu = f.mu.values()[k].to_f64_lossy();
            s += (r * mu - rfp + theta0 * r * c.to_f64_lossy()) * phi[k];
        }
        s *= vol;
        s -= face_pairing(&gradient(&f.c), &test.phi, len);
        total += wt * psi * s;
    }
    Ok(total.abs())
}

/// Outcome of the time-integrated energy audit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyInequalityReport {
    /// `min_n (E_0 + sum tol - E(t_n) - int_0^{t_n} D)`; negative means violated.
    pub worst_margin: f64,
    pub worst_step: usize,
    pub violations: usize,
    pub final_margin: f64,
}

impl EnergyInequalityReport {
    pub fn ok(&self) -> bool {
        self.violations == 0
    }
}

/// Checks `E(t_n) + int_0^{t_n} (S:grad u + |grad mu|^2) <= E_0 + sum tol` at every record.
///
/// Dissipation is integrated with the rectangle rule at the new time level,
/// which is how the stepper's per-step audit pairs it.
pub fn audit_energy_inequality<T: Real>(records: &[DiagnosticsRecord<T>]) -> Result<EnergyInequalityReport> {
    if records.is_empty() {
        return Err(Error::Trajectory("no diagnostics records".into()));
    }
    let e0 = records[0].energy.to_f64_lossy();
    let mut dissipated = 0.0;
    let mut tol = 0.0;
    let mut rep = EnergyInequalityReport {
        worst_margin: if records.len() > 1 { f64::INFINITY } else { 0.0 },
        worst_step: records[0].step,
        violations: 0,
        final_margin: 0.0,
    };
    for w in records.windows(2) {
        let dt = (w[1].time - w[0].time).to_f64_lossy();
        dissipated += dt * (w[1].visc_dissipation + w[1].mu_dissipation).to_f64_lossy();
        tol += w[1].tol_energy.to_f64_lossy();
        let margin = e0 + tol - w[1].energy.to_f64_lossy() - dissipated;
        if margin < 0.0 {
            rep.violations += 1;
        }
        if margin < rep.worst_margin {
            rep.worst_margin = margin;
            rep.worst_step = w[1].step;
        }
        rep.final_margin = margin;
    }
    Ok(rep)
}

/// Default spatial factor of scalar tests: `1 + xi^2 (3 - 2 xi)`, times `(1 + eta^2)` in 2D.
pub fn default_scalar_phi(dim: usize) -> Polynomial {
    let px = Polynomial::new(vec![(1.0, 0, 0), (3.0, 2, 0), (-2.0, 3, 0)]);
    if dim == 1 {
        px
    } else {
        px.product(&Polynomial::new(vec![(1.0, 0, 0), (1.0, 0, 2)]))
    }
}

/// Default momentum test: `wall_bubble * (1 + xi)` in every component.
pub fn default_vector_test(dim: usize, psi: TimeBump) -> VectorTest {
    let base = Polynomial::new(vec![(1.0, 0, 0), (1.0, 1, 0)]);
    VectorTest::vanishing(dim, psi, [base.clone(), base])
}

/// Whether the time bump may be nonzero at `t = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Convention {
    /// Tests supported in `[0, T)`.
    Closed,
    /// Tests supported in `(0, T)`.
    Open,
}

impl Convention {
    pub fn name(&self) -> &'static str {
        match self {
            Convention::Closed => "[0,T)",
            Convention::Open => "(0,T)",
        }
    }

    /// Bump supported up to `fraction * t_end`.
    pub fn bump(&self, t_end: f64, fraction: f64) -> TimeBump {
        let t0 = fraction * t_end;
        match self {
            Convention::Closed => TimeBump::Initial { t0 },
            Convention::Open => TimeBump::Interior { t0 },
        }
    }
}

/// One residual evaluated on one trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualEntry {
    /// `renormalized-continuity`, `momentum`, `concentration` or `chemical-potential`.
    pub identity: &'static str,
    /// Renormalization pair, when relevant.
    pub variant: String,
    pub convention: Convention,
    pub value: f64,
}

/// Every identity under both conventions, every library pair, default tests.
pub fn residual_set<T: Real>(traj: &Trajectory<T>, physics: &Physics<T>, support_fraction: f64) -> Result<Vec<ResidualEntry>> {
    let t_end = traj.final_time().to_f64_lossy();
    let dim = traj.grid().dim();
    let mut out = Vec::new();
    for conv in [Convention::Closed, Convention::Open] {
        let psi = conv.bump(t_end, support_fraction);
        let st = ScalarTest {
            psi,
            phi: default_scalar_phi(dim),
        };
        for pair in RenormPair::library() {
            out.push(ResidualEntry {
                identity: "renormalized-continuity",
                variant: pair.name(),
                convention: conv,
                value: residual_renormalized_continuity(traj, pair, &st)?,
            });
        }
        out.push(ResidualEntry {
            identity: "momentum",
            variant: String::new(),
            convention: conv,
            value: residual_momentum(traj, physics, &default_vector_test(dim, psi))?,
        });
        out.push(ResidualEntry {
            identity: "concentration",
            variant: String::new(),
            convention: conv,
            value: residual_concentration(traj, &st)?,
        });
        out.push(ResidualEntry {
            identity: "chemical-potential",
            variant: String::new(),
            convention: conv,
            value: residual_chemical_potential(traj, physics, &st)?,
        });
    }
    Ok(out)
}

/// Residuals across refinement levels with the observed ratios.
#[derive(Debug, Clone, PartialEq)]
pub struct RefinementRow {
    pub identity: &'static str,
    pub variant: String,
    pub convention: Convention,
    /// One residual per level, coarsest first.
    pub residuals: Vec<f64>,
}

impl RefinementRow {
    /// `r_k / r_{k+1}` per halving.
    pub fn ratios(&self) -> Vec<f64> {
        self.residuals.windows(2).map(|w| w[0] / w[1]).collect()
    }

    /// `log2` of the ratios.
    pub fn orders(&self) -> Vec<f64> {
        self.ratios().iter().map(|r| r.log2()).collect()
    }

    /// Whether the identity's own test class uses this convention: the
    /// chemical-potential identity is posed on `(0, T)`, the others on `[0, T)`.
    pub fn native(&self) -> bool {
        (self.identity == "chemical-potential") == (self.convention == Convention::Open)
    }
}

/// Assembles rows from per-level residual sets produced by `residual_set`.
pub fn refinement_table(levels: &[Vec<ResidualEntry>]) -> Result<Vec<RefinementRow>> {
    let first = levels.first().ok_or_else(|| Error::Trajectory("no refinement levels".into()))?;
    let mut rows: Vec<RefinementRow> = first
        .iter()
        .map(|e| RefinementRow {
            identity: e.identity,
            variant: e.variant.clone(),
            convention: e.convention,
            residuals: Vec::with_capacity(levels.len()),
        })
        .collect();
    for set in levels {
        if set.len() != rows.len() {
            return Err(Error::Trajectory("refinement levels disagree on the residual set".into()));
        }
        for (row, e) in rows.iter_mut().zip(set) {
            row.residuals.push(e.value);
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bumps_have_closed_form_derivatives() {
        for psi in [TimeBump::Interior { t0: 1.5 }, TimeBump::Initial { t0: 1.5 }] {
            for &t in &[0.1, 0.4, 0.75, 1.2] {
                let h = 1e-6;
                let fd = (psi.value(t + h) - psi.value(t - h)) / (2.0 * h);
                assert!((fd - psi.derivative(t)).abs() < 1e-8, "{psi:?} at {t}");
            }
            assert_eq!(psi.value(1.5), 0.0);
            assert_eq!(psi.value(2.0), 0.0);
        }
        assert_eq!(TimeBump::Interior { t0: 1.0 }.value(0.0), 0.0);
        assert!((TimeBump::Initial { t0: 1.0 }.value(0.0) - (-1.0f64).exp()).abs() < 1e-16);
    }

    #[test]
    fn renormalization_closed_form_matches_quadrature() {
        for pair in RenormPair::library() {
            for &r in &[0.2, 0.7, 1.0, 1.5, 2.0, 3.7] {
                // composite Simpson on [1, r], split at the kink
                let mut knots = vec![1.0, r];
                if let RenormPair::Truncation { k } = pair {
                    if (k - 1.0) * (k - r) < 0.0 {
                        knots.insert(1, k);
                    }
                }
                let mut q = 0.0;
                for w in knots.windows(2) {
                    let n = 2000;
                    let h = (w[1] - w[0]) / n as f64;
                    let f = |z: f64| pair.b(z) / (z * z);
                    let mut s = f(w[0]) + f(w[1]);
                    for i in 1..n {
                        s += f(w[0] + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
                    }
                    q += s * h / 3.0;
                }
                let closed = pair.big_b(r);
                assert!((pair.anchor() + q - closed).abs() < 1e-10, "{pair:?} r={r}: {closed} vs {}", pair.anchor() + q);
            }
        }
    }

    #[test]
    fn constant_vector_test_is_rejected() {
        let t = VectorTest {
            psi: TimeBump::Interior { t0: 1.0 },
            phi: [Polynomial::constant(1.0), Polynomial::constant(0.0)],
        };
        assert!(matches!(t.check_boundary(1, [1.0, 1.0]), Err(Error::TestFunction(_))));
        let ok = default_vector_test(2, TimeBump::Interior { t0: 1.0 });
        ok.check_boundary(2, [2.0, 3.0]).unwrap();
    }

    #[test]
    fn polynomial_gradient_matches_differences() {
        let p = default_scalar_phi(2).product(&Polynomial::wall_bubble(2));
        let len = [2.0, 3.0];
        let (x, y) = (0.7, 1.1);
        let h = 1e-6;
        let g = p.gradient(x, y, len);
        let fx = (p.value(x + h, y, len) - p.value(x - h, y, len)) / (2.0 * h);
        let fy = (p.value(x, y + h, len) - p.value(x, y - h, len)) / (2.0 * h);
        assert!((g[0] - fx).abs() < 1e-8 && (g[1] - fy).abs() < 1e-8);
    }
}
