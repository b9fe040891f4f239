use super::{bicgstab, CsrMatrix, KrylovConfig};
use crate::error::{Error, Result};
use crate::real::{norm_inf, Real};

#[derive(Debug, Clone, Copy)]
pub struct NewtonConfig<T> {
    /// Stop when `||F(x)||_inf <= abs_tol`.
    pub abs_tol: T,
    /// Stop when `||F(x)||_inf <= rel_tol * ||F(x0)||_inf`.
    pub rel_tol: T,
    pub max_iter: usize,
    /// Initial step length in `(0, 1]`.
    pub damping: T,
    /// Backtracking factor applied while the residual fails to decrease.
    pub shrink: T,
    pub max_backtracks: usize,
    pub krylov: KrylovConfig<T>,
}

impl<T: Real> Default for NewtonConfig<T> {
    fn default() -> Self {
        let floor = T::epsilon() * T::lit(1024.0);
        Self {
            abs_tol: T::lit(1e-10).max(floor),
            rel_tol: T::lit(1e-9).max(floor),
            max_iter: 50,
            damping: T::one(),
            shrink: T::lit(0.5),
            max_backtracks: 30,
            krylov: KrylovConfig::default(),
        }
    }
}

impl<T: Real> NewtonConfig<T> {
    pub fn validate(&self) -> Result<()> {
        let ok = self.abs_tol > T::zero()
            && self.rel_tol > T::zero()
            && self.max_iter >= 1
            && self.damping > T::zero()
            && self.damping <= T::one()
            && self.shrink > T::zero()
            && self.shrink < T::one();
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(
                "newton: tolerances must be positive, max_iter >= 1, damping in (0,1], shrink in (0,1)".into(),
            ))
        }
    }
}

#[derive(Debug, Clone)]
pub struct NewtonReport<T> {
    pub x: Vec<T>,
    pub iterations: usize,
    pub krylov_iterations: usize,
    /// `||F(x)||_inf` at the returned iterate.
    pub residual: T,
    /// Residual vector at the returned iterate.
    pub residual_vec: Vec<T>,
}

/// Damped Newton iteration with backtracking on `||F||_inf`.
///
/// `residual` evaluates `F(x)`; `jacobian` assembles `F'(x)`. Each linear
/// correction is solved with BiCGStab using `cfg.krylov`.
pub fn newton_solve<T, R, J>(mut residual: R, mut jacobian: J, x0: &[T], cfg: &NewtonConfig<T>) -> Result<NewtonReport<T>>
where
    T: Real,
    R: FnMut(&[T]) -> Result<Vec<T>>,
    J: FnMut(&[T]) -> Result<CsrMatrix<T>>,
{
    const NAME: &str = "newton";
    cfg.validate()?;
    let mut x = x0.to_vec();
    let mut r = residual(&x)?;
    let mut rn = norm_inf(&r);
    if !rn.is_finite() {
        return Err(Error::NonFinite(NAME));
    }
    let r0 = rn;
    let converged = |rn: T| rn <= cfg.abs_tol || rn <= cfg.rel_tol * r0;
    let mut krylov_iterations = 0;
    let mut trial = vec![T::zero(); x.len()];
    for it in 0..cfg.max_iter {
        if converged(rn) {
            return Ok(NewtonReport {
                x,
                iterations: it,
                krylov_iterations,
                residual: rn,
                residual_vec: r,
            });
        }
        let jac = jacobian(&x)?;
        let neg: Vec<T> = r.iter().map(|v| -*v).collect();
        let lin = bicgstab(&jac, &neg, None, &cfg.krylov)?;
        krylov_iterations += lin.iterations;
        let dx = lin.x;

        let mut step = cfg.damping;
        let mut accepted = None;
        for _ in 0..=cfg.max_backtracks {
            for i in 0..x.len() {
                trial[i] = x[i] + step * dx[i];
            }
            let rt = residual(&trial)?;
            let rtn = norm_inf(&rt);
            if rtn.is_finite() && (rtn < rn || converged(rtn)) {
                accepted = Some((rt, rtn));
                break;
            }
            step = step * cfg.shrink;
        }
        match accepted {
            Some((rt, rtn)) => {
                std::mem::swap(&mut x, &mut trial);
                r = rt;
                rn = rtn;
            }
            None => {
                return Err(Error::NonConvergence {
                    solver: NAME,
                    iterations: it + 1,
                    residual: rn.to_f64_lossy(),
                })
            }
        }
    }
    if converged(rn) {
        return Ok(NewtonReport {
            x,
            iterations: cfg.max_iter,
            krylov_iterations,
            residual: rn,
            residual_vec: r,
        });
    }
    Err(Error::NonConvergence {
        solver: NAME,
        iterations: cfg.max_iter,
        residual: rn.to_f64_lossy(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linsolve::TripletBuilder;

    fn diag(v: &[f64]) -> CsrMatrix<f64> {
        let mut t = TripletBuilder::new(v.len(), v.len());
        for (i, &d) in v.iter().enumerate() {
            t.push(i, i, d);
        }
        t.build()
    }

    #[test]
    fn affine_residual_converges_in_one_step() {
        let a = [1.0, -2.0, 3.5];
        let rep = newton_solve(
            |x: &[f64]| Ok(x.iter().zip(&a).map(|(x, a)| x - a).collect()),
            |x: &[f64]| Ok(diag(&vec![1.0; x.len()])),
            &[0.0; 3],
            &NewtonConfig::default(),
        )
        .unwrap();
        assert_eq!(rep.iterations, 1);
        for (x, a) in rep.x.iter().zip(a) {
            assert!((x - a).abs() < 1e-14);
        }
    }

    #[test]
    fn backtracking_rescues_arctan() {
        // full Newton steps on atan diverge from x0 = 3
        let rep = newton_solve(
            |x: &[f64]| Ok(vec![x[0].atan()]),
            |x: &[f64]| Ok(diag(&[1.0 / (1.0 + x[0] * x[0])])),
            &[3.0],
            &NewtonConfig::default(),
        )
        .unwrap();
        assert!(rep.x[0].abs() < 2e-9);
    }

    #[test]
    fn reports_nonconvergence() {
        let cfg = NewtonConfig {
            max_iter: 2,
            ..Default::default()
        };
        let err = newton_solve(
            |x: &[f64]| Ok(vec![x[0].exp() - 1e6]),
            |x: &[f64]| Ok(diag(&[x[0].exp()])),
            &[0.0],
            &cfg,
        )
        .unwrap_err();
        assert!(matches!(err, Error::NonConvergence { .. }));
    }
}
