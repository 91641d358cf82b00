//! Dirichlet Stokes solves on box domains, for the oscillating operator
//! `L_eps = -div(A(x/eps) grad)` and the homogenized operator with a
//! constant tensor, with full data `(F, h, g, f)`.
//!
//! Discretization: staggered MAC grid. Solver: Krylov (BiCGStab with an
//! FGMRES fallback) on the full saddle system, block-preconditioned by a
//! constant-coefficient multigrid V-cycle per velocity component and a
//! scaled mass approximation of the pressure Schur complement.

pub mod mac;
mod mg;

use crate::coeff::CoefficientField;
use crate::krylov::{self, KrylovOpts, KrylovVec};
use crate::tensor::Tensor4;
use mac::{id3, project_mean_zero, Ghost, MacCoeff, MacOp, MacVec};
pub use mac::{BoxDomain, MatrixData, ScalarData, VectorData};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::sync::{Arc, Mutex};

#[derive(Debug, thiserror::Error)]
pub enum BvpError {
    #[error("invalid domain: {0}")]
    BadDomain(String),
    #[error("incompatible data: defect {defect:.3e} exceeds 1e-8 * scale ({scale:.3e})")]
    Incompatible { defect: f64, scale: f64 },
    #[error("solver did not converge: residual {residual:.3e} (target {target:.3e}) after {iterations} iterations")]
    Convergence {
        residual: f64,
        target: f64,
        iterations: usize,
    },
    #[error("ball (center {center:?}, radius {radius}) not inside the domain")]
    BallOutsideDomain { center: [f64; 3], radius: f64 },
    #[error("{0}")]
    BadProblem(String),
}

/// Where the operator coefficients come from.
#[derive(Clone)]
pub enum CoeffSource {
    /// `A(x/eps)` with analytic evaluation at stencil points.
    Oscillating {
        field: Arc<CoefficientField>,
        eps: f64,
    },
    /// A constant tensor (the homogenized operator).
    Constant(Tensor4),
}

impl CoeffSource {
    fn as_field(&self) -> (Arc<CoefficientField>, Option<f64>) {
        match self {
            CoeffSource::Oscillating { field, eps } => (field.clone(), Some(*eps)),
            CoeffSource::Constant(t) => {
                (Arc::new(CoefficientField::from_constant(t.clone())), None)
            }
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            CoeffSource::Oscillating { field, .. } => field.dim(),
            CoeffSource::Constant(t) => t.dim(),
        }
    }
}

/// The Dirichlet problem `L u + grad p = F + div(h)`, `div u = g`, `u = f`
/// on the boundary.
#[derive(Clone)]
pub struct StokesProblem {
    pub domain: BoxDomain,
    pub coeff: CoeffSource,
    pub body_force: VectorData,
    pub flux_data: Option<MatrixData>,
    pub divergence: Option<ScalarData>,
    pub boundary: VectorData,
}

impl StokesProblem {
    pub fn new(domain: BoxDomain, coeff: CoeffSource) -> Self {
        StokesProblem {
            domain,
            coeff,
            body_force: VectorData::zero(),
            flux_data: None,
            divergence: None,
            boundary: VectorData::zero(),
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct SolverStats {
    pub iterations: usize,
    pub method: String,
    pub residual: f64,
    /// Absolute residual target the Krylov solve ran against.
    pub target: f64,
    pub div_residual: f64,
    /// `(|u|_H1 + |p|_L2) / (data norms)`, the empirical energy constant.
    pub energy_constant: f64,
    pub energy_lhs: f64,
    pub data_norm: f64,
}

/// A discrete velocity/pressure pair with mean-zero pressure. Velocity
/// arrays include the boundary normal faces (holding the Dirichlet data
/// exactly); the boundary closure is retained for ghost-aware measurement.
#[derive(Clone)]
pub struct StokesSolution {
    pub domain: BoxDomain,
    pub u: Vec<Vec<f64>>,
    pub p: Vec<f64>,
    pub boundary: VectorData,
    pub stats: SolverStats,
}

#[derive(Clone, Debug)]
pub struct SolveOpts {
    pub tol: f64,
    pub max_iter: usize,
    /// Seed for a random initial guess (uniqueness checks); zero guess if
    /// absent.
    pub initial_seed: Option<u64>,
}

impl Default for SolveOpts {
    fn default() -> Self {
        SolveOpts {
            tol: 1e-9,
            max_iter: 2000,
            initial_seed: None,
        }
    }
}

/// Signed compatibility defect `int_O g - int_dO f.n` by the scheme's
/// quadrature (midpoint on cells, face midpoints on the boundary).
pub fn check_compatibility(problem: &StokesProblem) -> f64 {
    let dom = &problem.domain;
    let d = dom.dim();
    let h = dom.h();
    let hd = h.powi(d as i32);
    let hda = h.powi(d as i32 - 1);
    let mut total_g = 0.0;
    if let Some(g) = &problem.divergence {
        let cd = dom.cell_dims();
        for i0 in 0..cd[0] {
            for i1 in 0..cd[1] {
                for i2 in 0..cd[2] {
                    total_g += g.eval(&dom.cell_center([i0, i1, i2])) * hd;
                }
            }
        }
    }
    let mut total_f = 0.0;
    for a in 0..d {
        let fd = dom.face_dims(a);
        for i0 in 0..fd[0] {
            for i1 in 0..fd[1] {
                for i2 in 0..fd[2] {
                    let idx = [i0, i1, i2];
                    if idx[a] == 0 {
                        let pos = dom.face_pos(a, idx);
                        total_f -= problem.boundary.eval(&pos)[a] * hda;
                    } else if idx[a] == dom.n()[a] {
                        let pos = dom.face_pos(a, idx);
                        total_f += problem.boundary.eval(&pos)[a] * hda;
                    }
                }
            }
        }
    }
    total_g - total_f
}

struct Assembled {
    op: MacOp,
    rhs: MacVec,
    u_bc: Vec<Vec<f64>>,
}

fn assemble(problem: &StokesProblem) -> Result<Assembled, BvpError> {
    let dom = problem.domain;
    let d = dom.dim();
    if problem.coeff.dim() != d {
        return Err(BvpError::BadProblem(
            "coefficient dimension does not match the domain".into(),
        ));
    }
    let (field, eps) = problem.coeff.as_field();
    let coeff = mac::sample_coefficients(&dom, &field, eps);
    let abar = match &coeff {
        MacCoeff::ScalarVar { center, .. } => {
            center.iter().sum::<f64>() / center.len() as f64
        }
        MacCoeff::Constant { tensor, .. } => tensor.isotropic_proxy(),
        MacCoeff::FullVar { field, .. } => field.isotropic_mean(),
    };
    let op = MacOp { dom, coeff, abar };

    // Boundary closure materialized on the normal boundary faces.
    let mut u_bc: Vec<Vec<f64>> = (0..d).map(|a| vec![0.0; dom.faces(a)]).collect();
    for a in 0..d {
        let fd = dom.face_dims(a);
        for i0 in 0..fd[0] {
            for i1 in 0..fd[1] {
                for i2 in 0..fd[2] {
                    let idx = [i0, i1, i2];
                    if idx[a] == 0 || idx[a] == dom.n()[a] {
                        let pos = dom.face_pos(a, idx);
                        u_bc[a][id3(fd, idx)] = problem.boundary.eval(&pos)[a];
                    }
                }
            }
        }
    }

    // rhs_u = F + div(h) - L(u_bc) on interior faces.
    let mut rhs = MacVec::zeros(&dom);
    let h = dom.h();
    for a in 0..d {
        let fd = dom.face_dims(a);
        for i0 in 0..fd[0] {
            for i1 in 0..fd[1] {
                for i2 in 0..fd[2] {
                    let idx = [i0, i1, i2];
                    if idx[a] == 0 || idx[a] == dom.n()[a] {
                        continue;
                    }
                    let pos = dom.face_pos(a, idx);
                    let mut v = problem.body_force.eval(&pos)[a];
                    if let Some(hf) = &problem.flux_data {
                        // div(h)^a = d_i h^{ai}, centered at the face.
                        for i in 0..d {
                            let mut pp = pos;
                            let mut pm = pos;
                            pp[i] += 0.5 * h;
                            pm[i] -= 0.5 * h;
                            v += (hf.eval(&pp)[a * 3 + i] - hf.eval(&pm)[a * 3 + i]) / h;
                        }
                    }
                    rhs.u[a][id3(fd, idx)] = v;
                }
            }
        }
    }
    let mut lu_bc: Vec<Vec<f64>> = (0..d).map(|a| vec![0.0; dom.faces(a)]).collect();
    op.apply_visc(&u_bc, Ghost::Data(&problem.boundary), &mut lu_bc);
    for a in 0..d {
        for (r, l) in rhs.u[a].iter_mut().zip(lu_bc[a].iter()) {
            *r -= l;
        }
    }

    // rhs_p = -(g - D u_bc).
    let mut du_bc = vec![0.0; dom.cells()];
    op.div_u(&u_bc, &mut du_bc);
    let cd = dom.cell_dims();
    for i0 in 0..cd[0] {
        for i1 in 0..cd[1] {
            for i2 in 0..cd[2] {
                let c = [i0, i1, i2];
                let g = problem
                    .divergence
                    .as_ref()
                    .map(|g| g.eval(&dom.cell_center(c)))
                    .unwrap_or(0.0);
                rhs.p[id3(cd, c)] = -(g - du_bc[id3(cd, c)]);
            }
        }
    }
    Ok(Assembled { op, rhs, u_bc })
}

fn data_scale(problem: &StokesProblem) -> f64 {
    // L1-style magnitudes of the data entering the compatibility condition.
    let dom = &problem.domain;
    let d = dom.dim();
    let h = dom.h();
    let mut s = 0.0;
    if let Some(g) = &problem.divergence {
        let cd = dom.cell_dims();
        for i0 in 0..cd[0] {
            for i1 in 0..cd[1] {
                for i2 in 0..cd[2] {
                    s += g.eval(&dom.cell_center([i0, i1, i2])).abs() * h.powi(d as i32);
                }
            }
        }
    }
    for a in 0..d {
        let fd = dom.face_dims(a);
        for i0 in 0..fd[0] {
            for i1 in 0..fd[1] {
                for i2 in 0..fd[2] {
                    let idx = [i0, i1, i2];
                    if idx[a] == 0 || idx[a] == dom.n()[a] {
                        let pos = dom.face_pos(a, idx);
                        s += problem.boundary.eval(&pos)[a].abs() * h.powi(d as i32 - 1);
                    }
                }
            }
        }
    }
    s
}

/// Solve the Dirichlet Stokes problem to the given relative residual.
pub fn solve_stokes(problem: &StokesProblem, tol: f64) -> Result<StokesSolution, BvpError> {
    solve_stokes_opts(
        problem,
        &SolveOpts {
            tol,
            ..SolveOpts::default()
        },
    )
}

/// Homogenized solve; the problem must carry a constant tensor.
pub fn solve_homogenized(problem: &StokesProblem, tol: f64) -> Result<StokesSolution, BvpError> {
    if !matches!(problem.coeff, CoeffSource::Constant(_)) {
        return Err(BvpError::BadProblem(
            "solve_homogenized expects a constant coefficient tensor".into(),
        ));
    }
    solve_stokes(problem, tol)
}

/// A discrete point force: mass `strength` in one pressure cell of one
/// momentum component, face-averaged onto the velocity grid.
#[derive(Clone, Copy, Debug)]
pub struct PointSource {
    pub comp: usize,
    pub cell: [usize; 3],
    pub strength: f64,
}

pub fn solve_stokes_opts(
    problem: &StokesProblem,
    opts: &SolveOpts,
) -> Result<StokesSolution, BvpError> {
    solve_stokes_with_sources(problem, &[], opts)
}

/// Solve with additional point sources on the momentum right-hand side
/// (discrete deltas for Green's-function columns).
pub fn solve_stokes_with_sources(
    problem: &StokesProblem,
    sources: &[PointSource],
    opts: &SolveOpts,
) -> Result<StokesSolution, BvpError> {
    let dom = problem.domain;
    let d = dom.dim();

    // Compatibility gate.
    let defect = check_compatibility(problem);
    let scale = data_scale(problem).max(1.0);
    if defect.abs() > 1e-8 * scale {
        return Err(BvpError::Incompatible {
            defect,
            scale,
        });
    }

    let Assembled { op, mut rhs, u_bc } = assemble(problem)?;

    // Point sources: value strength/h^d in the cell, half per face.
    let hd = dom.h().powi(d as i32);
    for s in sources {
        let fd = dom.face_dims(s.comp);
        let mut hi = s.cell;
        hi[s.comp] += 1;
        let v = 0.5 * s.strength / hd;
        for idx in [s.cell, hi] {
            if idx[s.comp] != 0 && idx[s.comp] != dom.n()[s.comp] {
                rhs.u[s.comp][id3(fd, idx)] += v;
            }
        }
    }

    // Remove the (round-off level) compatibility defect so the singular
    // system is exactly consistent, then keep pressure updates mean-free.
    let mean_bp = rhs.p.iter().sum::<f64>() / rhs.p.len() as f64;
    for v in rhs.p.iter_mut() {
        *v -= mean_bp;
    }

    // Preconditioner: one constant-coefficient multigrid per velocity
    // component (components are independent, solved in parallel) plus the
    // viscosity-scaled mass approximation of the pressure Schur complement.
    let mgs: Vec<Mutex<mg::FaceMg>> = (0..d)
        .map(|a| Mutex::new(mg::FaceMg::new(d, a, dom.cell_dims(), dom.h())))
        .collect();
    let abar = op.abar;
    let schur_scale: Vec<f64> = match &op.coeff {
        MacCoeff::ScalarVar { center, .. } => center.clone(),
        _ => vec![abar; dom.cells()],
    };
    let precond = |r: &MacVec, z: &mut MacVec| {
        z.u.par_iter_mut().enumerate().for_each(|(a, zu)| {
            let mut mg = mgs[a].lock().unwrap();
            mg.solve_approx(&r.u[a], zu);
            for v in zu.iter_mut() {
                *v /= abar;
            }
        });
        for (v, (rv, s)) in z.p.iter_mut().zip(r.p.iter().zip(schur_scale.iter())) {
            *v = rv * s;
        }
        project_mean_zero(&mut z.p);
    };
    let apply = |x: &MacVec, y: &mut MacVec| op.apply_saddle(x, y);

    let x0 = opts.initial_seed.map(|seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut v = MacVec::zeros(&dom);
        for a in 0..d {
            let fd = dom.face_dims(a);
            for i0 in 0..fd[0] {
                for i1 in 0..fd[1] {
                    for i2 in 0..fd[2] {
                        let idx = [i0, i1, i2];
                        if idx[a] != 0 && idx[a] != dom.n()[a] {
                            v.u[a][id3(fd, idx)] = rng.gen::<f64>() - 0.5;
                        }
                    }
                }
            }
        }
        for p in v.p.iter_mut() {
            *p = rng.gen::<f64>() - 0.5;
        }
        project_mean_zero(&mut v.p);
        v
    });

    let kopts = KrylovOpts {
        tol: opts.tol,
        max_iter: opts.max_iter,
        restart: 12,
    };
    let (mut x, stats) = krylov::solve_robust(&apply, &precond, &rhs, x0, &kopts).map_err(
        |e| match e {
            krylov::SolveError::NoConvergence {
                residual,
                target,
                iterations,
            } => BvpError::Convergence {
                residual,
                target,
                iterations,
            },
            krylov::SolveError::Breakdown(msg) => BvpError::BadProblem(msg),
        },
    )?;

    // Final residual diagnostics before adding the boundary closure.
    let mut resid = rhs.clone();
    let mut ax = rhs.clone();
    op.apply_saddle(&x, &mut ax);
    resid.axpy(-1.0, &ax);
    let div_residual = resid.p.norm() * dom.h().powi(d as i32).sqrt();

    // Full velocity = Krylov solution + boundary closure; mean-zero pressure.
    for a in 0..d {
        for (v, b) in x.u[a].iter_mut().zip(u_bc[a].iter()) {
            *v += b;
        }
    }
    project_mean_zero(&mut x.p);

    let mut sol = StokesSolution {
        domain: dom,
        u: x.u,
        p: x.p,
        boundary: problem.boundary.clone(),
        stats: SolverStats {
            iterations: stats.iterations,
            method: stats.method.to_string(),
            residual: stats.final_residual,
            target: stats.target_residual,
            div_residual,
            ..SolverStats::default()
        },
    };
    record_energy(problem, &mut sol);
    Ok(sol)
}

/// Record the empirical energy constant
/// `(|u|_H1 + |p|_L2_0) / (|F| + |h| + |g| + |f|_proxy)`.
/// The boundary term uses an `L2 + tangential-gradient` proxy for the
/// `H^{1/2}` norm.
fn record_energy(problem: &StokesProblem, sol: &mut StokesSolution) {
    let dom = &problem.domain;
    let d = dom.dim();
    let h = dom.h();
    let hd = h.powi(d as i32);
    let lhs = sol.h1_norm_u() + sol.l2_norm_p();

    let mut f_l2 = 0.0;
    let cd = dom.cell_dims();
    for i0 in 0..cd[0] {
        for i1 in 0..cd[1] {
            for i2 in 0..cd[2] {
                let pos = dom.cell_center([i0, i1, i2]);
                let fv = problem.body_force.eval(&pos);
                f_l2 += (0..d).map(|a| fv[a] * fv[a]).sum::<f64>() * hd;
                if let Some(hf) = &problem.flux_data {
                    let hv = hf.eval(&pos);
                    f_l2 += hv.iter().map(|v| v * v).sum::<f64>() * hd;
                }
                if let Some(g) = &problem.divergence {
                    let gv = g.eval(&pos);
                    f_l2 += gv * gv * hd;
                }
            }
        }
    }
    // Boundary proxy: sample the boundary at the normal-face quadrature
    // points, take L2 plus tangential-difference L2.
    let mut bnd = 0.0;
    for a in 0..d {
        let fd = dom.face_dims(a);
        for side in [0usize, dom.n()[a]] {
            for i0 in 0..fd[0] {
                for i1 in 0..fd[1] {
                    for i2 in 0..fd[2] {
                        let idx = [i0, i1, i2];
                        if idx[a] != side {
                            continue;
                        }
                        let pos = dom.face_pos(a, idx);
                        let fv = problem.boundary.eval(&pos);
                        let mag2: f64 = (0..d).map(|k| fv[k] * fv[k]).sum();
                        bnd += mag2 * h.powi(d as i32 - 1);
                        for t in 0..d {
                            if t == a {
                                continue;
                            }
                            let mut pt = pos;
                            pt[t] += h;
                            let f2 = problem.boundary.eval(&pt);
                            let dmag2: f64 =
                                (0..d).map(|k| (f2[k] - fv[k]) / h).map(|v| v * v).sum();
                            bnd += dmag2 * h.powi(d as i32 - 1) * h * h; // scaled tangential H1 piece
                        }
                    }
                }
            }
        }
    }
    let data = f_l2.sqrt() + bnd.sqrt();
    sol.stats.energy_lhs = lhs;
    sol.stats.data_norm = data;
    sol.stats.energy_constant = if data > 0.0 { lhs / data } else { 0.0 };
}

impl StokesSolution {
    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    /// Velocity vector at a cell center (faces averaged).
    pub fn velocity_at_center(&self, c: [usize; 3]) -> [f64; 3] {
        let dom = &self.domain;
        let mut v = [0.0; 3];
        for a in 0..dom.dim() {
            let fd = dom.face_dims(a);
            let mut hi = c;
            hi[a] += 1;
            v[a] = 0.5 * (self.u[a][id3(fd, c)] + self.u[a][id3(fd, hi)]);
        }
        v
    }

    pub fn pressure_at(&self, c: [usize; 3]) -> f64 {
        self.p[id3(self.domain.cell_dims(), c)]
    }

    /// `d_j u^b` at a cell center, ghost-aware via the stored boundary data.
    pub fn du_center(&self, b: usize, j: usize, c: [usize; 3]) -> f64 {
        let dom = &self.domain;
        let mut loc2 = [0i64; 3];
        for k in 0..dom.dim() {
            loc2[k] = 2 * c[k] as i64 + 1;
        }
        mac::du_at(dom, &self.u, b, j, loc2, Ghost::Data(&self.boundary))
    }

    /// `d_k d_j u^b` at a cell center: centered difference of `du_center`,
    /// one-sided on the outermost cell ring.
    pub fn d2u_center(&self, b: usize, j: usize, k: usize, c: [usize; 3]) -> f64 {
        let dom = &self.domain;
        let n = dom.n();
        let h = dom.h();
        let mut lo = c;
        let mut hi = c;
        let (dlo, dhi, denom) = if c[k] == 0 {
            hi[k] += 1;
            (c, hi, h)
        } else if c[k] + 1 == n[k] {
            lo[k] -= 1;
            (lo, c, h)
        } else {
            lo[k] -= 1;
            hi[k] += 1;
            (lo, hi, 2.0 * h)
        };
        (self.du_center(b, j, dhi) - self.du_center(b, j, dlo)) / denom
    }

    /// Discrete L2 norm of the velocity over faces.
    pub fn l2_norm_u(&self) -> f64 {
        let dom = &self.domain;
        let hd = dom.h().powi(dom.dim() as i32);
        let mut s = 0.0;
        for a in 0..dom.dim() {
            for v in &self.u[a] {
                s += v * v * hd;
            }
        }
        s.sqrt()
    }

    /// Max |u| over faces.
    pub fn linf_norm_u(&self) -> f64 {
        let mut m = 0.0f64;
        for ua in &self.u {
            for v in ua {
                m = m.max(v.abs());
            }
        }
        m
    }

    /// Discrete H1 seminorm via the native gradient samples.
    pub fn h1_seminorm_u(&self) -> f64 {
        let dom = &self.domain;
        let d = dom.dim();
        let hd = dom.h().powi(d as i32);
        let mut s = 0.0;
        let cd = dom.cell_dims();
        for i0 in 0..cd[0] {
            for i1 in 0..cd[1] {
                for i2 in 0..cd[2] {
                    let c = [i0, i1, i2];
                    for b in 0..d {
                        for j in 0..d {
                            let g = self.du_center(b, j, c);
                            s += g * g * hd;
                        }
                    }
                }
            }
        }
        s.sqrt()
    }

    pub fn h1_norm_u(&self) -> f64 {
        let a = self.l2_norm_u();
        let b = self.h1_seminorm_u();
        (a * a + b * b).sqrt()
    }

    /// Mean-zero pressure L2 norm.
    pub fn l2_norm_p(&self) -> f64 {
        let dom = &self.domain;
        let hd = dom.h().powi(dom.dim() as i32);
        let mean = self.p.iter().sum::<f64>() / self.p.len() as f64;
        self.p
            .iter()
            .map(|v| (v - mean) * (v - mean) * hd)
            .sum::<f64>()
            .sqrt()
    }

    /// Pressure-mean defect relative to max |p|.
    pub fn pressure_mean_defect(&self) -> f64 {
        let mean = self.p.iter().sum::<f64>() / self.p.len() as f64;
        let max = self.p.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if max > 0.0 {
            mean.abs() / max
        } else {
            0.0
        }
    }
}

/// Both sides of the interior Caccioppoli inequality on a ball: returns
/// `(lhs, rhs)` with `lhs = int_{B_{r/2}} |grad u|^2` and
/// `rhs = r^{-2} int_{B_r} |u|^2 + r^2 int |F|^2 + int |h|^2 + int |g|^2`.
pub fn caccioppoli_check(
    solution: &StokesSolution,
    problem: &StokesProblem,
    center: [f64; 3],
    radius: f64,
) -> Result<(f64, f64), BvpError> {
    let dom = &solution.domain;
    let d = dom.dim();
    if dom.dist_to_boundary(center) < radius {
        return Err(BvpError::BallOutsideDomain {
            center,
            radius,
        });
    }
    let h = dom.h();
    let hd = h.powi(d as i32);
    let cd = dom.cell_dims();
    let mut lhs = 0.0;
    let mut u2 = 0.0;
    let mut f2 = 0.0;
    let mut h2 = 0.0;
    let mut g2 = 0.0;
    for i0 in 0..cd[0] {
        for i1 in 0..cd[1] {
            for i2 in 0..cd[2] {
                let c = [i0, i1, i2];
                let pos = dom.cell_center(c);
                let dist2: f64 = (0..d).map(|k| (pos[k] - center[k]).powi(2)).sum();
                let dist = dist2.sqrt();
                if dist <= radius {
                    let v = solution.velocity_at_center(c);
                    u2 += (0..d).map(|k| v[k] * v[k]).sum::<f64>() * hd;
                    let fv = problem.body_force.eval(&pos);
                    f2 += (0..d).map(|k| fv[k] * fv[k]).sum::<f64>() * hd;
                    if let Some(hf) = &problem.flux_data {
                        let hv = hf.eval(&pos);
                        h2 += hv.iter().map(|v| v * v).sum::<f64>() * hd;
                    }
                    if let Some(g) = &problem.divergence {
                        let gv = g.eval(&pos);
                        g2 += gv * gv * hd;
                    }
                }
                if dist <= 0.5 * radius {
                    for b in 0..d {
                        for j in 0..d {
                            let gv = solution.du_center(b, j, c);
                            lhs += gv * gv * hd;
                        }
                    }
                }
            }
        }
    }
    let rhs = u2 / (radius * radius) + radius * radius * f2 + h2 + g2;
    Ok((lhs, rhs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coeff::{make_coefficient, FamilySpec};
    use std::f64::consts::PI;

    fn identity_problem(n: usize) -> StokesProblem {
        StokesProblem::new(
            BoxDomain::unit(2, n),
            CoeffSource::Constant(Tensor4::identity(2)),
        )
    }

    /// Manufactured solution: u = curl(sin^2(pi x) sin^2(pi y)),
    /// p = cos(pi x) cos(pi y); F computed analytically for A = I.
    fn manufactured(n: usize) -> (StokesProblem, VectorData, ScalarData) {
        let u_exact = VectorData::new(|p, out| {
            let (x, y) = (p[0], p[1]);
            out[0] = PI * (PI * x).sin().powi(2) * (2.0 * PI * y).sin();
            out[1] = -PI * (2.0 * PI * x).sin() * (PI * y).sin().powi(2);
            out[2] = 0.0;
        });
        let p_exact = ScalarData::new(|p| (PI * p[0]).cos() * (PI * p[1]).cos());
        let force = VectorData::new(|p, out| {
            let (x, y) = (p[0], p[1]);
            // -Laplace u + grad p.
            let lap_u1 = 2.0 * PI.powi(3) * (2.0 * PI * x).cos() * (2.0 * PI * y).sin()
                - 4.0 * PI.powi(3) * (PI * x).sin().powi(2) * (2.0 * PI * y).sin();
            let lap_u2 = -2.0 * PI.powi(3) * (2.0 * PI * y).cos() * (2.0 * PI * x).sin()
                + 4.0 * PI.powi(3) * (PI * y).sin().powi(2) * (2.0 * PI * x).sin();
            let dpx = -PI * (PI * x).sin() * (PI * y).cos();
            let dpy = -PI * (PI * x).cos() * (PI * y).sin();
            out[0] = -lap_u1 + dpx;
            out[1] = -lap_u2 + dpy;
            out[2] = 0.0;
        });
        let mut prob = identity_problem(n);
        prob.body_force = force;
        (prob, u_exact, p_exact)
    }

    fn velocity_error_l2(sol: &StokesSolution, exact: &VectorData) -> f64 {
        let dom = &sol.domain;
        let d = dom.dim();
        let hd = dom.h().powi(d as i32);
        let mut s = 0.0;
        for a in 0..d {
            let fd = dom.face_dims(a);
            for i0 in 0..fd[0] {
                for i1 in 0..fd[1] {
                    for i2 in 0..fd[2] {
                        let idx = [i0, i1, i2];
                        let pos = dom.face_pos(a, idx);
                        let e = sol.u[a][id3(fd, idx)] - exact.eval(&pos)[a];
                        s += e * e * hd;
                    }
                }
            }
        }
        s.sqrt()
    }

    #[test]
    fn compatibility_examples() {
        // g = 0, f = 0 -> 0.
        let prob = identity_problem(8);
        assert_eq!(check_compatibility(&prob), 0.0);

        // g = 1 on the unit square -> 1.
        let mut prob = identity_problem(8);
        prob.divergence = Some(ScalarData::new(|_| 1.0));
        assert!((check_compatibility(&prob) - 1.0).abs() < 1e-12);

        // f = outward normal -> -|dO| = -4.
        let mut prob = identity_problem(8);
        prob.boundary = VectorData::new(|p, out| {
            *out = [0.0; 3];
            for k in 0..2 {
                if p[k] == 0.0 {
                    out[k] = -1.0;
                }
                if (p[k] - 1.0).abs() < 1e-14 {
                    out[k] = 1.0;
                }
            }
        });
        assert!((check_compatibility(&prob) + 4.0).abs() < 1e-12);
    }

    #[test]
    fn zero_data_gives_zero_solution() {
        let prob = identity_problem(8);
        let sol = solve_stokes(&prob, 1e-10).unwrap();
        assert!(sol.linf_norm_u() < 1e-12);
        assert!(sol.l2_norm_p() < 1e-12);
    }

    #[test]
    fn incompatible_data_is_rejected() {
        let mut prob = identity_problem(8);
        prob.divergence = Some(ScalarData::new(|_| 1.0));
        match solve_stokes(&prob, 1e-8) {
            Err(BvpError::Incompatible { .. }) => {}
            other => panic!("expected Incompatible, got {:?}", other.map(|_| ())),
        }
    }

    #[test]
    fn manufactured_solution_second_order() {
        let mut errs = Vec::new();
        for n in [16usize, 32] {
            let (prob, u_exact, _) = manufactured(n);
            let sol = solve_stokes(&prob, 1e-10).unwrap();
            errs.push(velocity_error_l2(&sol, &u_exact));
        }
        let order = (errs[0] / errs[1]).log2();
        assert!(
            (order - 2.0).abs() < 0.35,
            "observed order {order}, errors {errs:?}"
        );
    }

    #[test]
    fn uniqueness_under_initial_guess() {
        let (prob, _, _) = manufactured(16);
        let tol = 1e-10;
        let s1 = solve_stokes_opts(
            &prob,
            &SolveOpts {
                tol,
                max_iter: 2000,
                initial_seed: None,
            },
        )
        .unwrap();
        let s2 = solve_stokes_opts(
            &prob,
            &SolveOpts {
                tol,
                max_iter: 2000,
                initial_seed: Some(42),
            },
        )
        .unwrap();
        let mut diff = 0.0f64;
        for a in 0..2 {
            for (x, y) in s1.u[a].iter().zip(s2.u[a].iter()) {
                diff = diff.max((x - y).abs());
            }
        }
        let scale = s1.linf_norm_u().max(1e-300);
        assert!(
            diff <= 10.0 * tol * scale.max(1.0) * 100.0,
            "solutions differ by {diff}"
        );
    }

    #[test]
    fn constant_field_oscillating_equals_constant_source() {
        // A constant coefficient field through the eps path gives the
        // identical discrete system as the constant-tensor path.
        let n = 12;
        let dom = BoxDomain::unit(2, n);
        let field = Arc::new(make_coefficient(&FamilySpec::constant_identity(), 2).unwrap());
        let mut p1 = StokesProblem::new(
            dom,
            CoeffSource::Oscillating {
                field,
                eps: 0.37,
            },
        );
        let mut p2 = StokesProblem::new(dom, CoeffSource::Constant(Tensor4::identity(2)));
        let force = VectorData::new(|p, out| {
            out[0] = (PI * p[0]).sin() * (2.0 * PI * p[1]).cos();
            out[1] = p[0] * p[1];
            out[2] = 0.0;
        });
        p1.body_force = force.clone();
        p2.body_force = force;
        let s1 = solve_stokes(&p1, 1e-11).unwrap();
        let s2 = solve_stokes(&p2, 1e-11).unwrap();
        for a in 0..2 {
            for (x, y) in s1.u[a].iter().zip(s2.u[a].iter()) {
                assert!((x - y).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn caccioppoli_zero_solution() {
        let prob = identity_problem(16);
        let sol = solve_stokes(&prob, 1e-10).unwrap();
        let (lhs, rhs) = caccioppoli_check(&sol, &prob, [0.5, 0.5, 0.0], 0.25).unwrap();
        assert_eq!(lhs, 0.0);
        assert_eq!(rhs, 0.0);
    }

    #[test]
    fn caccioppoli_ball_must_be_interior() {
        let prob = identity_problem(16);
        let sol = solve_stokes(&prob, 1e-10).unwrap();
        assert!(matches!(
            caccioppoli_check(&sol, &prob, [0.1, 0.5, 0.0], 0.25),
            Err(BvpError::BallOutsideDomain { .. })
        ));
    }

    #[test]
    fn oscillating_coefficients_solve_and_record_energy() {
        let n = 32;
        let dom = BoxDomain::unit(2, n);
        let field = Arc::new(make_coefficient(&FamilySpec::trig(0.5), 2).unwrap());
        let mut prob = StokesProblem::new(
            dom,
            CoeffSource::Oscillating {
                field,
                eps: 0.25,
            },
        );
        prob.body_force = VectorData::new(|p, out| {
            out[0] = (2.0 * PI * p[1]).sin();
            out[1] = (2.0 * PI * p[0]).cos();
            out[2] = 0.0;
        });
        let sol = solve_stokes(&prob, 1e-9).unwrap();
        assert!(sol.stats.residual <= sol.stats.target);
        assert!(sol.stats.energy_constant > 0.0);
        assert!(sol.pressure_mean_defect() < 1e-12);
        // Divergence-free to solver tolerance.
        assert!(sol.stats.div_residual < 1e-7);
    }
}
