//! Runs one scenario for a decreasing sequence of regularization parameters
//! and compares the members.
//!
//! Members are independent simulations on a shared grid and time step; they
//! run concurrently on a bounded number of worker threads and the report is
//! assembled after all of them finish.

use std::io::Write;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use crate::diagnostics::{timeseries_norms, DiagnosticsRecord, NormSummary};
use crate::error::{Error, Result};
use crate::real::Real;

/// Environment variable capping the number of worker threads.
pub const THREADS_ENV: &str = "NSCH_THREADS";

pub const DEFAULT_SCHEDULE: [f64; 5] = [1e-1, 3e-2, 1e-2, 3e-3, 1e-3];

#[derive(Debug, Clone, PartialEq)]
pub struct SweepPlan {
    pub eps_schedule: Vec<f64>,
}

impl Default for SweepPlan {
    fn default() -> Self {
        Self {
            eps_schedule: DEFAULT_SCHEDULE.to_vec(),
        }
    }
}

impl SweepPlan {
    pub fn new(eps_schedule: Vec<f64>) -> Result<Self> {
        let p = Self { eps_schedule };
        p.validate()?;
        Ok(p)
    }

    /// Nonempty, strictly decreasing, every entry in `(0, 1/2)`.
    pub fn validate(&self) -> Result<()> {
        let s = &self.eps_schedule;
        if s.is_empty() {
            return Err(Error::InvalidParameter("eps schedule is empty".into()));
        }
        if let Some(e) = s.iter().find(|e| !(**e > 0.0 && **e < 0.5)) {
            return Err(Error::InvalidParameter(format!("eps {e} outside (0, 1/2)")));
        }
        if s.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::InvalidParameter("eps schedule must be strictly decreasing".into()));
        }
        Ok(())
    }
}

/// Worker count: `NSCH_THREADS` if set to a positive integer, otherwise the
/// available parallelism; never more than `members`.
pub fn thread_count(members: usize) -> Result<usize> {
    let cap = match std::env::var(THREADS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => n,
            _ => return Err(Error::InvalidParameter(format!("{THREADS_ENV}={v:?} is not a positive integer"))),
        },
        Err(_) => std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1),
    };
    Ok(cap.min(members).max(1))
}

/// What one member hands back to the sweep.
#[derive(Debug, Clone)]
pub struct MemberRun<T> {
    pub records: Vec<DiagnosticsRecord<T>>,
    /// Concentration at each record time, cell values.
    pub c_frames: Vec<Vec<T>>,
    pub cell_volume: T,
    pub t_end: T,
    /// `F''(1 - eps)`.
    pub seam_curvature: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MemberSummary {
    pub eps: f64,
    /// `None` on success, the error text otherwise.
    pub failure: Option<String>,
    pub norms: Option<NormSummary<f64>>,
    pub seam_curvature: f64,
    /// `max_t phase_defect * F''(1 - eps)^2`.
    pub scaled_defect: f64,
    /// `||c_eps_i - c_eps_{i+1}||_{L^2((0,T) x Omega)}`, `None` for the last member.
    pub c_diff_next: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepReport {
    pub members: Vec<MemberSummary>,
}

impl SweepReport {
    pub fn complete(&self) -> bool {
        self.members.iter().all(|m| m.failure.is_none())
    }

    /// `max / min` of the scaled defect over successful members. NaN when
    /// every defect is zero, infinite when only some are.
    pub fn defect_span(&self) -> Option<f64> {
        let v: Vec<f64> = self.members.iter().filter(|m| m.failure.is_none()).map(|m| m.scaled_defect).collect();
        if v.is_empty() {
            return None;
        }
        let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let min = v.iter().cloned().fold(f64::INFINITY, f64::min);
        Some(max / min)
    }

    /// Per norm, value at the smallest `eps` over value at the largest.
    pub fn uniformity_ratios(&self) -> Option<[f64; 4]> {
        let first = self.members.first()?.norms?;
        let last = self.members.last()?.norms?;
        let r = |a: f64, b: f64| if a == 0.0 && b == 0.0 { 1.0 } else { b / a };
        Some([
            r(first.ne1_l2, last.ne1_l2),
            r(first.ne1_abs_l2, last.ne1_abs_l2),
            r(first.mu_l2_h1, last.mu_l2_h1),
            r(first.sqrt_rho_fprime_l2, last.sqrt_rho_fprime_l2),
        ])
    }

    /// Consecutive differences nonincreasing from the second one on. A
    /// heuristic: convergence is only known along subsequences.
    pub fn cauchy_tail(&self) -> Option<bool> {
        let d: Vec<f64> = self.members.iter().filter_map(|m| m.c_diff_next).collect();
        if d.len() + 1 != self.members.len() {
            return None;
        }
        Some(d.iter().skip(1).collect::<Vec<_>>().windows(2).all(|w| w[1] <= w[0]))
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(
            w,
            "eps,status,ne1_l2,ne1_abs_l2,mu_l2_h1,sqrt_rho_fprime_l2,phase_defect_max,seam_curvature,scaled_defect,c_diff_next"
        )?;
        let opt = |v: Option<f64>| v.map(|x| format!("{x:e}")).unwrap_or_default();
        for m in &self.members {
            let status = match &m.failure {
                None => "ok".to_string(),
                Some(e) => format!("\"failed: {}\"", e.replace('"', "'")),
            };
            let n = m.norms;
            writeln!(
                w,
                "{:e},{status},{},{},{},{},{},{:e},{:e},{}",
                m.eps,
                opt(n.map(|n| n.ne1_l2)),
                opt(n.map(|n| n.ne1_abs_l2)),
                opt(n.map(|n| n.mu_l2_h1)),
                opt(n.map(|n| n.sqrt_rho_fprime_l2)),
                opt(n.map(|n| n.phase_defect_max)),
                m.seam_curvature,
                m.scaled_defect,
                opt(m.c_diff_next),
            )?;
        }
        writeln!(w, "# defect_span,{}", opt(self.defect_span()))?;
        if let Some(r) = self.uniformity_ratios() {
            writeln!(w, "# uniformity_ratios,{:e},{:e},{:e},{:e}", r[0], r[1], r[2], r[3])?;
        }
        if let Some(t) = self.cauchy_tail() {
            writeln!(w, "# cauchy_tail_heuristic,{t}")?;
        }
        Ok(())
    }
}

/// `||a - b||_{L^2((0,T) x Omega)}` by trapezoid in time, midpoint in space.
fn space_time_distance<T: Real>(a: &MemberRun<T>, b: &MemberRun<T>) -> Result<f64> {
    if a.c_frames.len() != b.c_frames.len() || a.records.len() != a.c_frames.len() {
        return Err(Error::Trajectory("members have different frame counts".into()));
    }
    let vol = a.cell_volume.to_f64_lossy();
    let sq: Vec<f64> = a
        .c_frames
        .iter()
        .zip(&b.c_frames)
        .map(|(x, y)| {
            x.iter()
                .zip(y)
                .map(|(p, q)| {
                    let d = (*p - *q).to_f64_lossy();
                    d * d
                })
                .sum::<f64>()
                * vol
        })
        .collect();
    let t: Vec<f64> = a.records.iter().map(|r| r.time.to_f64_lossy()).collect();
    let s: f64 = (0..sq.len() - 1).map(|k| 0.5 * (t[k + 1] - t[k]) * (sq[k] + sq[k + 1])).sum();
    Ok(s.sqrt())
}

fn summarize<T: Real>(eps: f64, run: &Result<MemberRun<T>>) -> MemberSummary {
    match run {
        Ok(m) => match timeseries_norms(&m.records, m.t_end) {
            Ok(n) => {
                let n = NormSummary {
                    ne1_l2: n.ne1_l2.to_f64_lossy(),
                    ne1_abs_l2: n.ne1_abs_l2.to_f64_lossy(),
                    mu_l2_h1: n.mu_l2_h1.to_f64_lossy(),
                    sqrt_rho_fprime_l2: n.sqrt_rho_fprime_l2.to_f64_lossy(),
                    phase_defect_max: n.phase_defect_max.to_f64_lossy(),
                };
                let k = m.seam_curvature.to_f64_lossy();
                MemberSummary {
                    eps,
                    failure: None,
                    norms: Some(n),
                    seam_curvature: k,
                    scaled_defect: n.phase_defect_max * k * k,
                    c_diff_next: None,
                }
            }
            Err(e) => failed(eps, &e),
        },
        Err(e) => failed(eps, e),
    }
}

fn failed(eps: f64, e: &Error) -> MemberSummary {
    MemberSummary {
        eps,
        failure: Some(e.to_string()),
        norms: None,
        seam_curvature: f64::NAN,
        scaled_defect: f64::NAN,
        c_diff_next: None,
    }
}

/// Runs every member through `run_member` on up to `threads` workers and
/// assembles the report. A failing member is annotated, not fatal.
pub fn run_sweep<T, F>(plan: &SweepPlan, threads: usize, run_member: F) -> Result<(SweepReport, Vec<Result<MemberRun<T>>>)>
where
    T: Real + Send,
    F: Fn(usize, f64) -> Result<MemberRun<T>> + Sync,
{
    plan.validate()?;
    let n = plan.eps_schedule.len();
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<MemberRun<T>>>>> = Mutex::new((0..n).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..threads.clamp(1, n) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= n {
                    break;
                }
                let out = run_member(i, plan.eps_schedule[i]);
                slots.lock().expect("sweep slot lock")[i] = Some(out);
            });
        }
    });
    let runs: Vec<Result<MemberRun<T>>> = slots
        .into_inner()
        .expect("sweep slot lock")
        .into_iter()
        .map(|s| s.unwrap_or_else(|| Err(Error::Trajectory("member did not run".into()))))
        .collect();
    let mut members: Vec<MemberSummary> = plan.eps_schedule.iter().zip(&runs).map(|(&e, r)| summarize(e, r)).collect();
    for i in 0..n.saturating_sub(1) {
        if let (Ok(a), Ok(b)) = (&runs[i], &runs[i + 1]) {
            match space_time_distance(a, b) {
                Ok(d) => members[i].c_diff_next = Some(d),
                Err(e) => {
                    members[i].failure.get_or_insert(e.to_string());
                }
            }
        }
    }
    Ok((SweepReport { members }, runs))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_validation() {
        assert!(SweepPlan::default().validate().is_ok());
        assert!(SweepPlan::new(vec![0.1, 0.1]).is_err());
        assert!(SweepPlan::new(vec![0.6]).is_err());
        assert!(SweepPlan::new(vec![]).is_err());
        assert!(SweepPlan::new(vec![0.01, 0.1]).is_err());
    }
}
