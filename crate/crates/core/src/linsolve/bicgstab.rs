use super::CsrMatrix;
use crate::error::{Error, Result};
use crate::real::{dot, norm2, Real};

/// Right preconditioner applied inside BiCGStab.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preconditioner {
    Identity,
    /// Inverse of the diagonal; zero diagonal entries are left unscaled.
    Jacobi,
    /// Inverse of consecutive `bs x bs` diagonal blocks.
    BlockJacobi(usize),
}

#[derive(Debug, Clone, Copy)]
pub struct KrylovConfig<T> {
    /// Target `||b - A x|| <= tol * ||b||`.
    pub tol: T,
    pub max_iter: usize,
    pub precond: Preconditioner,
}

impl<T: Real> Default for KrylovConfig<T> {
    fn default() -> Self {
        Self {
            tol: T::lit(1e-12).max(T::epsilon() * T::lit(64.0)),
            max_iter: 2000,
            precond: Preconditioner::Jacobi,
        }
    }
}

#[derive(Debug, Clone)]
pub struct KrylovReport<T> {
    pub x: Vec<T>,
    pub iterations: usize,
    /// Recomputed `||b - A x|| / ||b||` of the returned solution.
    pub residual: T,
}

enum Applied<T> {
    Identity,
    Diagonal(Vec<T>),
    Blocks { bs: usize, inv: Vec<T> },
}

impl<T: Real> Applied<T> {
    fn build(a: &CsrMatrix<T>, kind: Preconditioner) -> Self {
        match kind {
            Preconditioner::Identity => Applied::Identity,
            Preconditioner::Jacobi => Applied::Diagonal(
                a.diagonal()
                    .into_iter()
                    .map(|d| if d != T::zero() { T::one() / d } else { T::one() })
                    .collect(),
            ),
            Preconditioner::BlockJacobi(bs) if bs <= 1 => Self::build(a, Preconditioner::Jacobi),
            Preconditioner::BlockJacobi(bs) => {
                let n = a.nrows();
                if n % bs != 0 {
                    return Self::build(a, Preconditioner::Jacobi);
                }
                let mut inv = Vec::with_capacity(n * bs);
                let mut block = vec![T::zero(); bs * bs];
                for b0 in (0..n).step_by(bs) {
                    block.iter_mut().for_each(|v| *v = T::zero());
                    for r in 0..bs {
                        for (c, v) in a.row(b0 + r) {
                            if c >= b0 && c < b0 + bs {
                                block[r * bs + (c - b0)] = v;
                            }
                        }
                    }
                    match invert_dense(&block, bs) {
                        Some(bi) => inv.extend(bi),
                        None => {
                            // singular block: fall back to the scaled identity
                            for r in 0..bs {
                                for c in 0..bs {
                                    let d = block[r * bs + r];
                                    let v = if r == c && d != T::zero() {
                                        T::one() / d
                                    } else if r == c {
                                        T::one()
                                    } else {
                                        T::zero()
                                    };
                                    inv.push(v);
                                }
                            }
                        }
                    }
                }
                Applied::Blocks { bs, inv }
            }
        }
    }

    fn apply(&self, x: &[T], y: &mut [T]) {
        match self {
            Applied::Identity => y.copy_from_slice(x),
            Applied::Diagonal(d) => {
                for ((yi, xi), di) in y.iter_mut().zip(x).zip(d) {
                    *yi = *xi * *di;
                }
            }
            Applied::Blocks { bs, inv } => {
                let bs = *bs;
                for (blk, (yb, xb)) in y.chunks_mut(bs).zip(x.chunks(bs)).enumerate() {
                    let m = &inv[blk * bs * bs..(blk + 1) * bs * bs];
                    for r in 0..bs {
                        yb[r] = (0..bs).map(|c| m[r * bs + c] * xb[c]).sum();
                    }
                }
            }
        }
    }
}

/// Gauss-Jordan inverse with partial pivoting of a small row-major block.
fn invert_dense<T: Real>(a: &[T], n: usize) -> Option<Vec<T>> {
    let mut m = a.to_vec();
    let mut inv = vec![T::zero(); n * n];
    for i in 0..n {
        inv[i * n + i] = T::one();
    }
    let scale = a.iter().fold(T::zero(), |s, v| s.max(v.abs()));
    if scale == T::zero() {
        return None;
    }
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| m[i * n + col].abs().partial_cmp(&m[j * n + col].abs()).unwrap())?;
        if m[piv * n + col].abs() <= scale * T::epsilon() {
            return None;
        }
        if piv != col {
            for k in 0..n {
                m.swap(piv * n + k, col * n + k);
                inv.swap(piv * n + k, col * n + k);
            }
        }
        let d = T::one() / m[col * n + col];
        for k in 0..n {
            m[col * n + k] *= d;
            inv[col * n + k] *= d;
        }
        for r in 0..n {
            if r != col {
                let f = m[r * n + col];
                if f != T::zero() {
                    for k in 0..n {
                        m[r * n + k] = m[r * n + k] - f * m[col * n + k];
                        inv[r * n + k] = inv[r * n + k] - f * inv[col * n + k];
                    }
                }
            }
        }
    }
    Some(inv)
}

fn true_residual<T: Real>(a: &CsrMatrix<T>, b: &[T], x: &[T], r: &mut [T]) {
    a.matvec_into(x, r);
    for (ri, bi) in r.iter_mut().zip(b) {
        *ri = *bi - *ri;
    }
}

/// Right-preconditioned BiCGStab.
///
/// Convergence is declared only after the residual of the candidate solution
/// has been recomputed from `b - A x`; a stale recurrence residual triggers a
/// restart instead.
pub fn bicgstab<T: Real>(a: &CsrMatrix<T>, b: &[T], x0: Option<&[T]>, cfg: &KrylovConfig<T>) -> Result<KrylovReport<T>> {
    const NAME: &str = "bicgstab";
    let n = a.nrows();
    if a.ncols() != n || b.len() != n {
        return Err(Error::InvalidParameter(format!(
            "bicgstab needs a square system (matrix {}x{}, rhs {})",
            n,
            a.ncols(),
            b.len()
        )));
    }
    let bnorm = norm2(b);
    if !bnorm.is_finite() {
        return Err(Error::NonFinite(NAME));
    }
    let mut x = match x0 {
        Some(x0) => x0.to_vec(),
        None => vec![T::zero(); n],
    };
    if bnorm == T::zero() {
        return Ok(KrylovReport {
            x: vec![T::zero(); n],
            iterations: 0,
            residual: T::zero(),
        });
    }
    let target = cfg.tol * bnorm;
    let pre = Applied::build(a, cfg.precond);

    let mut r = vec![T::zero(); n];
    true_residual(a, b, &x, &mut r);
    let mut rnorm = norm2(&r);
    if rnorm <= target {
        return Ok(KrylovReport {
            x,
            iterations: 0,
            residual: rnorm / bnorm,
        });
    }

    let mut r_hat = r.clone();
    let mut p = vec![T::zero(); n];
    let mut v = vec![T::zero(); n];
    let mut p_hat = vec![T::zero(); n];
    let mut s = vec![T::zero(); n];
    let mut s_hat = vec![T::zero(); n];
    let mut t = vec![T::zero(); n];
    let (mut rho, mut alpha, mut omega) = (T::one(), T::one(), T::one());
    let mut restarts = 0usize;
    let tiny = T::min_positive_value().sqrt();

    let mut it = 0usize;
    while it < cfg.max_iter {
        it += 1;
        let rho_new = dot(&r_hat, &r);
        if rho_new.abs() <= tiny * rnorm * norm2(&r_hat) || !rho_new.is_finite() {
            // lost biorthogonality: restart from the true residual
            restarts += 1;
            if restarts > 10 {
                return Err(Error::Breakdown {
                    solver: NAME,
                    iterations: it,
                    residual: (rnorm / bnorm).to_f64_lossy(),
                });
            }
            true_residual(a, b, &x, &mut r);
            r_hat.copy_from_slice(&r);
            p.iter_mut().for_each(|z| *z = T::zero());
            v.iter_mut().for_each(|z| *z = T::zero());
            rho = T::one();
            alpha = T::one();
            omega = T::one();
            continue;
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        for i in 0..n {
            p[i] = r[i] + beta * (p[i] - omega * v[i]);
        }
        pre.apply(&p, &mut p_hat);
        a.matvec_into(&p_hat, &mut v);
        let rv = dot(&r_hat, &v);
        if rv == T::zero() || !rv.is_finite() {
            rho = T::zero();
            continue;
        }
        alpha = rho / rv;
        for i in 0..n {
            s[i] = r[i] - alpha * v[i];
        }
        let snorm = norm2(&s);
        if snorm <= target {
            for i in 0..n {
                x[i] += alpha * p_hat[i];
            }
            true_residual(a, b, &x, &mut r);
            rnorm = norm2(&r);
            if rnorm <= target {
                return Ok(KrylovReport {
                    x,
                    iterations: it,
                    residual: rnorm / bnorm,
                });
            }
            r_hat.copy_from_slice(&r);
            p.iter_mut().for_each(|z| *z = T::zero());
            v.iter_mut().for_each(|z| *z = T::zero());
            rho = T::one();
            alpha = T::one();
            omega = T::one();
            continue;
        }
        pre.apply(&s, &mut s_hat);
        a.matvec_into(&s_hat, &mut t);
        let tt = dot(&t, &t);
        omega = if tt > T::zero() { dot(&t, &s) / tt } else { T::zero() };
        for i in 0..n {
            x[i] += alpha * p_hat[i] + omega * s_hat[i];
            r[i] = s[i] - omega * t[i];
        }
        rnorm = norm2(&r);
        if !rnorm.is_finite() {
            return Err(Error::NonFinite(NAME));
        }
        if rnorm <= target {
            true_residual(a, b, &x, &mut r);
            rnorm = norm2(&r);
            if rnorm <= target {
                return Ok(KrylovReport {
                    x,
                    iterations: it,
                    residual: rnorm / bnorm,
                });
            }
            r_hat.copy_from_slice(&r);
            p.iter_mut().for_each(|z| *z = T::zero());
            v.iter_mut().for_each(|z| *z = T::zero());
            rho = T::one();
            alpha = T::one();
            omega = T::one();
            continue;
        }
        if omega == T::zero() {
            rho = T::zero();
        }
    }
    true_residual(a, b, &x, &mut r);
    Err(Error::NonConvergence {
        solver: NAME,
        iterations: it,
        residual: (norm2(&r) / bnorm).to_f64_lossy(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linsolve::TripletBuilder;

    #[test]
    fn identity_in_one_iteration() {
        let a = CsrMatrix::<f64>::identity(5);
        let b = vec![1.0, -2.0, 3.0, 0.5, 4.0];
        let rep = bicgstab(&a, &b, None, &KrylovConfig::default()).unwrap();
        assert!(rep.iterations <= 1);
        assert_eq!(rep.x, b);
    }

    #[test]
    fn block_inverse_matches_direct() {
        let blk = [4.0, 1.0, -2.0, 3.0];
        let inv = invert_dense(&blk, 2).unwrap();
        let det: f64 = 4.0 * 3.0 + 2.0;
        let expect = [3.0 / det, -1.0 / det, 2.0 / det, 4.0 / det];
        for (a, b) in inv.iter().zip(expect) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn nonsymmetric_block_system() {
        let n = 40;
        let mut t = TripletBuilder::new(n, n);
        for i in 0..n {
            t.push(i, i, 4.0 + i as f64 * 0.01);
            if i + 1 < n {
                t.push(i, i + 1, -1.0);
                t.push(i + 1, i, -2.0);
            }
        }
        let a = t.build();
        let b: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
        for pc in [Preconditioner::Identity, Preconditioner::Jacobi, Preconditioner::BlockJacobi(2)] {
            let cfg = KrylovConfig {
                precond: pc,
                ..Default::default()
            };
            let rep = bicgstab(&a, &b, None, &cfg).unwrap();
            let r: Vec<f64> = a.matvec(&rep.x).iter().zip(&b).map(|(ax, bi)| bi - ax).collect();
            assert!(norm2(&r) <= 1e-12 * norm2(&b));
        }
    }
}
