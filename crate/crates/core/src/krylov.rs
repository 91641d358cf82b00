//! Matrix-free Krylov solvers over an abstract real inner-product space.
//!
//! Both the spectral cell solver (complex spectra viewed as real vectors)
//! and the staggered box solver (packed face/cell arrays) drive these
//! through the [`KrylovVec`] trait. All recurrences are deterministic.

#[derive(Debug, thiserror::Error)]
pub enum SolveError {
    #[error("solver did not converge: residual {residual:.3e} after {iterations} iterations (target {target:.3e})")]
    NoConvergence {
        residual: f64,
        target: f64,
        iterations: usize,
    },
    #[error("solver breakdown: {0}")]
    Breakdown(String),
}

/// Minimal vector-space operations needed by the solvers.
pub trait KrylovVec: Clone {
    fn dot(&self, other: &Self) -> f64;
    /// `self += alpha * x`
    fn axpy(&mut self, alpha: f64, x: &Self);
    fn scale(&mut self, alpha: f64);
    fn set_zero(&mut self);
    fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }
}

impl KrylovVec for Vec<f64> {
    fn dot(&self, other: &Self) -> f64 {
        self.iter().zip(other.iter()).map(|(a, b)| a * b).sum()
    }
    fn axpy(&mut self, alpha: f64, x: &Self) {
        for (y, v) in self.iter_mut().zip(x.iter()) {
            *y += alpha * v;
        }
    }
    fn scale(&mut self, alpha: f64) {
        for y in self.iter_mut() {
            *y *= alpha;
        }
    }
    fn set_zero(&mut self) {
        for y in self.iter_mut() {
            *y = 0.0;
        }
    }
}

#[derive(Clone, Debug)]
pub struct KrylovOpts {
    /// Relative residual target (w.r.t. the right-hand side norm).
    pub tol: f64,
    pub max_iter: usize,
    /// Restart length for FGMRES.
    pub restart: usize,
}

impl Default for KrylovOpts {
    fn default() -> Self {
        KrylovOpts {
            tol: 1e-9,
            max_iter: 4000,
            restart: 10,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct KrylovStats {
    pub iterations: usize,
    pub final_residual: f64,
    pub target_residual: f64,
    pub converged: bool,
    pub method: &'static str,
}

/// Preconditioned BiCGStab. `apply` computes `A x`; `precond` applies an
/// approximate inverse. Returns the solution and iteration statistics.
pub fn bicgstab<V: KrylovVec>(
    apply: &dyn Fn(&V, &mut V),
    precond: &dyn Fn(&V, &mut V),
    b: &V,
    x0: Option<V>,
    opts: &KrylovOpts,
) -> Result<(V, KrylovStats), SolveError> {
    let bnorm = b.norm();
    let mut x = match x0 {
        Some(x) => x,
        None => {
            let mut z = b.clone();
            z.set_zero();
            z
        }
    };
    let target = opts.tol * bnorm.max(f64::MIN_POSITIVE);
    let mut r = b.clone();
    let mut tmp = b.clone();
    apply(&x, &mut tmp);
    r.axpy(-1.0, &tmp);
    let mut rnorm = r.norm();
    if bnorm == 0.0 || rnorm <= target {
        let stats = KrylovStats {
            iterations: 0,
            final_residual: rnorm,
            target_residual: target,
            converged: true,
            method: "bicgstab",
        };
        return Ok((x, stats));
    }

    let r_hat = r.clone();
    let mut rho = 1.0f64;
    let mut alpha = 1.0f64;
    let mut omega = 1.0f64;
    let mut v = b.clone();
    v.set_zero();
    let mut p = v.clone();
    let mut phat = v.clone();
    let mut s = v.clone();
    let mut shat = v.clone();
    let mut t = v.clone();

    for it in 1..=opts.max_iter {
        let rho_new = r_hat.dot(&r);
        if rho_new.abs() < 1e-300 {
            return Err(SolveError::Breakdown(format!("rho = {rho_new} at iteration {it}")));
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        // p = r + beta (p - omega v)
        p.axpy(-omega, &v);
        p.scale(beta);
        p.axpy(1.0, &r);

        precond(&p, &mut phat);
        apply(&phat, &mut v);
        let denom = r_hat.dot(&v);
        if denom.abs() < 1e-300 {
            return Err(SolveError::Breakdown(format!("r_hat . v = {denom} at iteration {it}")));
        }
        alpha = rho / denom;
        s.clone_from(&r);
        s.axpy(-alpha, &v);
        let snorm = s.norm();
        if snorm <= target {
            x.axpy(alpha, &phat);
            let stats = KrylovStats {
                iterations: it,
                final_residual: snorm,
                target_residual: target,
                converged: true,
                method: "bicgstab",
            };
            return Ok((x, stats));
        }
        precond(&s, &mut shat);
        apply(&shat, &mut t);
        let tt = t.dot(&t);
        if tt.abs() < 1e-300 {
            return Err(SolveError::Breakdown(format!("t . t = {tt} at iteration {it}")));
        }
        omega = t.dot(&s) / tt;
        x.axpy(alpha, &phat);
        x.axpy(omega, &shat);
        r.clone_from(&s);
        r.axpy(-omega, &t);
        rnorm = r.norm();
        if rnorm <= target {
            let stats = KrylovStats {
                iterations: it,
                final_residual: rnorm,
                target_residual: target,
                converged: true,
                method: "bicgstab",
            };
            return Ok((x, stats));
        }
        if omega.abs() < 1e-300 {
            return Err(SolveError::Breakdown(format!("omega = {omega} at iteration {it}")));
        }
    }
    Err(SolveError::NoConvergence {
        residual: rnorm,
        target,
        iterations: opts.max_iter,
    })
}

/// Flexible GMRES with restart; tolerates nonlinear/varying preconditioners.
pub fn fgmres<V: KrylovVec>(
    apply: &dyn Fn(&V, &mut V),
    precond: &dyn Fn(&V, &mut V),
    b: &V,
    x0: Option<V>,
    opts: &KrylovOpts,
) -> Result<(V, KrylovStats), SolveError> {
    let m = opts.restart.max(2);
    let bnorm = b.norm();
    let target = opts.tol * bnorm.max(f64::MIN_POSITIVE);
    let mut x = match x0 {
        Some(x) => x,
        None => {
            let mut z = b.clone();
            z.set_zero();
            z
        }
    };
    let mut total_it = 0usize;
    let mut rnorm;

    loop {
        let mut r = b.clone();
        let mut tmp = b.clone();
        apply(&x, &mut tmp);
        r.axpy(-1.0, &tmp);
        rnorm = r.norm();
        if rnorm <= target || total_it >= opts.max_iter {
            break;
        }

        let mut basis: Vec<V> = Vec::with_capacity(m + 1);
        let mut zs: Vec<V> = Vec::with_capacity(m);
        let mut h = vec![vec![0.0f64; m]; m + 1];
        let mut g = vec![0.0f64; m + 1];
        let mut cs = vec![0.0f64; m];
        let mut sn = vec![0.0f64; m];
        r.scale(1.0 / rnorm);
        basis.push(r);
        g[0] = rnorm;

        let mut k_used = 0;
        for k in 0..m {
            if total_it >= opts.max_iter {
                break;
            }
            total_it += 1;
            let mut z = basis[k].clone();
            let mut w = basis[k].clone();
            precond(&basis[k], &mut z);
            apply(&z, &mut w);
            zs.push(z);
            // Modified Gram-Schmidt.
            for (i, vi) in basis.iter().enumerate() {
                h[i][k] = w.dot(vi);
                w.axpy(-h[i][k], vi);
            }
            h[k + 1][k] = w.norm();
            if h[k + 1][k] > 1e-300 {
                w.scale(1.0 / h[k + 1][k]);
            }
            basis.push(w);
            // Apply accumulated Givens rotations.
            for i in 0..k {
                let t = cs[i] * h[i][k] + sn[i] * h[i + 1][k];
                h[i + 1][k] = -sn[i] * h[i][k] + cs[i] * h[i + 1][k];
                h[i][k] = t;
            }
            let denom = (h[k][k] * h[k][k] + h[k + 1][k] * h[k + 1][k]).sqrt();
            if denom < 1e-300 {
                k_used = k + 1;
                break;
            }
            cs[k] = h[k][k] / denom;
            sn[k] = h[k + 1][k] / denom;
            h[k][k] = denom;
            h[k + 1][k] = 0.0;
            g[k + 1] = -sn[k] * g[k];
            g[k] *= cs[k];
            k_used = k + 1;
            if g[k + 1].abs() <= target {
                break;
            }
        }

        // Back substitution for the small least-squares system.
        let mut ys = vec![0.0f64; k_used];
        for i in (0..k_used).rev() {
            let mut s = g[i];
            for j in i + 1..k_used {
                s -= h[i][j] * ys[j];
            }
            ys[i] = s / h[i][i];
        }
        for (j, y) in ys.iter().enumerate() {
            x.axpy(*y, &zs[j]);
        }
        if k_used == 0 {
            break;
        }
    }

    let converged = rnorm <= target;
    let stats = KrylovStats {
        iterations: total_it,
        final_residual: rnorm,
        target_residual: target,
        converged,
        method: "fgmres",
    };
    if converged {
        Ok((x, stats))
    } else {
        Err(SolveError::NoConvergence {
            residual: rnorm,
            target,
            iterations: total_it,
        })
    }
}

/// BiCGStab with an FGMRES fallback on breakdown or stagnation.
pub fn solve_robust<V: KrylovVec>(
    apply: &dyn Fn(&V, &mut V),
    precond: &dyn Fn(&V, &mut V),
    b: &V,
    x0: Option<V>,
    opts: &KrylovOpts,
) -> Result<(V, KrylovStats), SolveError> {
    match bicgstab(apply, precond, b, x0.clone(), opts) {
        Ok(res) => Ok(res),
        Err(_) => fgmres(apply, precond, b, x0, opts),
    }
}
