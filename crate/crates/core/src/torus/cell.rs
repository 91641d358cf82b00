//! Spectral cell solver internals: the variable-coefficient Stokes operator
//! on the torus, preconditioned by the exact constant-coefficient inverse,
//! plus the assembly of the effective tensor, flux tensor, and dual
//! correctors.

use super::fft::{self, Dims};
use super::{CorrectorSet, DualCorrectors, FluxField, TorusError, TorusGrid};
use crate::coeff::{CoefficientField, Structure};
use crate::krylov::{self, KrylovOpts, KrylovVec};
use crate::tensor::Tensor4;
use num_complex::Complex64;
use rayon::prelude::*;
use std::f64::consts::PI;

/// Velocity iterate in spectral representation, one spectrum per component.
#[derive(Clone)]
struct SpecVec {
    comps: Vec<Vec<Complex64>>,
}

impl KrylovVec for SpecVec {
    fn dot(&self, other: &Self) -> f64 {
        let mut s = 0.0;
        for (a, b) in self.comps.iter().zip(other.comps.iter()) {
            for (x, y) in a.iter().zip(b.iter()) {
                s += x.re * y.re + x.im * y.im;
            }
        }
        s
    }
    fn axpy(&mut self, alpha: f64, x: &Self) {
        for (a, b) in self.comps.iter_mut().zip(x.comps.iter()) {
            for (y, v) in a.iter_mut().zip(b.iter()) {
                *y += alpha * v;
            }
        }
    }
    fn scale(&mut self, alpha: f64) {
        for a in self.comps.iter_mut() {
            for y in a.iter_mut() {
                *y *= alpha;
            }
        }
    }
    fn set_zero(&mut self) {
        for a in self.comps.iter_mut() {
            for y in a.iter_mut() {
                *y = Complex64::new(0.0, 0.0);
            }
        }
    }
}

/// Coefficient samples on the dealiased grid.
enum CoeffOnGrid {
    /// Scalar modulation `c(y)` only.
    Scalar(Vec<f64>),
    /// Full tensor per point, point-major layout of length `total * d^4`.
    Full(Vec<f64>),
    Constant(Tensor4),
}

pub(crate) struct CellContext {
    d: usize,
    dims_n: Dims,
    dims_m: Dims,
    coeff: CoeffOnGrid,
    abar: f64,
}

impl CellContext {
    pub fn new(a: &CoefficientField, grid: TorusGrid) -> Self {
        let d = grid.dim();
        let n = grid.n();
        let m = 3 * n / 2;
        let dims_n = fft::dims(d, n);
        let dims_m = fft::dims(d, m);
        let total_m = fft::total(dims_m);
        let coeff = match a.structure() {
            Structure::Constant(t) => CoeffOnGrid::Constant(t.clone()),
            Structure::Scalar(c) => {
                let mut vals = vec![0.0; total_m];
                let mut y = vec![0.0; d];
                for i in 0..dims_m[0] {
                    for j in 0..dims_m[1] {
                        for k in 0..dims_m[2] {
                            let idx = [i, j, k];
                            for (ax, yk) in y.iter_mut().enumerate() {
                                *yk = idx[ax] as f64 / dims_m[ax] as f64;
                            }
                            vals[fft::flat(dims_m, i, j, k)] = c.eval(&y);
                        }
                    }
                }
                CoeffOnGrid::Scalar(vals)
            }
            Structure::Full(_) => {
                let d4 = d * d * d * d;
                let mut vals = vec![0.0; total_m * d4];
                let mut y = vec![0.0; d];
                let mut t = Tensor4::zeros(d);
                for i in 0..dims_m[0] {
                    for j in 0..dims_m[1] {
                        for k in 0..dims_m[2] {
                            let idx = [i, j, k];
                            for (ax, yk) in y.iter_mut().enumerate() {
                                *yk = idx[ax] as f64 / dims_m[ax] as f64;
                            }
                            a.eval_tensor(&y, &mut t);
                            let base = fft::flat(dims_m, i, j, k) * d4;
                            vals[base..base + d4].copy_from_slice(t.as_slice());
                        }
                    }
                }
                CoeffOnGrid::Full(vals)
            }
        };
        CellContext {
            d,
            dims_n,
            dims_m,
            coeff,
            abar: a.isotropic_mean(),
        }
    }

    fn zero_vec(&self) -> SpecVec {
        SpecVec {
            comps: vec![vec![Complex64::new(0.0, 0.0); fft::total(self.dims_n)]; self.d],
        }
    }

    /// Physical-space velocity gradients `grad[k][g] = d_k u^g` on the
    /// dealiased grid, from the spectral iterate.
    fn gradients_on_m(&self, u: &SpecVec) -> Vec<Vec<Vec<Complex64>>> {
        let d = self.d;
        let mut grad = vec![vec![Vec::new(); d]; d];
        for g in 0..d {
            let padded = fft::resample_spectrum(&u.comps[g], self.dims_n, self.dims_m);
            for (k, row) in grad.iter_mut().enumerate() {
                let mut s = padded.clone();
                fft::derivative(&mut s, self.dims_m, k);
                fft::to_physical(&mut s, self.dims_m);
                row[g] = s;
            }
        }
        grad
    }

    /// `out = L u = -div(a grad u)` in spectral representation (no
    /// projection), with products dealiased on the 3/2 grid.
    fn apply_lop(&self, u: &SpecVec, out: &mut SpecVec) {
        let d = self.d;
        let total_m = fft::total(self.dims_m);
        let grad = self.gradients_on_m(u);

        // flux[i][a](x) = a_ik^{ag}(x) d_k u^g(x)
        let mut flux = vec![vec![vec![Complex64::new(0.0, 0.0); total_m]; d]; d];
        match &self.coeff {
            CoeffOnGrid::Scalar(c) => {
                for i in 0..d {
                    for a in 0..d {
                        let src = &grad[i][a];
                        let dst = &mut flux[i][a];
                        for (p, cv) in c.iter().enumerate() {
                            dst[p] = src[p] * cv;
                        }
                    }
                }
            }
            CoeffOnGrid::Constant(t) => {
                for i in 0..d {
                    for a in 0..d {
                        let dst = &mut flux[i][a];
                        for k in 0..d {
                            for g in 0..d {
                                let c = t.get(i, k, a, g);
                                if c != 0.0 {
                                    let src = &grad[k][g];
                                    for p in 0..total_m {
                                        dst[p] += src[p] * c;
                                    }
                                }
                            }
                        }
                    }
                }
            }
            CoeffOnGrid::Full(vals) => {
                let d4 = d * d * d * d;
                for p in 0..total_m {
                    let t = &vals[p * d4..(p + 1) * d4];
                    for i in 0..d {
                        for a in 0..d {
                            let mut s = Complex64::new(0.0, 0.0);
                            for k in 0..d {
                                for g in 0..d {
                                    s += t[((i * d + k) * d + a) * d + g] * grad[k][g][p];
                                }
                            }
                            flux[i][a][p] = s;
                        }
                    }
                }
            }
        }

        for a in 0..d {
            let acc = &mut out.comps[a];
            for v in acc.iter_mut() {
                *v = Complex64::new(0.0, 0.0);
            }
            for (i, frow) in flux.iter().enumerate() {
                let mut s = frow[a].clone();
                fft::to_spectral(&mut s, self.dims_m);
                let mut t = fft::resample_spectrum(&s, self.dims_m, self.dims_n);
                fft::derivative(&mut t, self.dims_n, i);
                for (av, tv) in acc.iter_mut().zip(t.iter()) {
                    *av -= tv;
                }
            }
        }
    }

    fn project(&self, v: &mut SpecVec) {
        fft::leray_project(&mut v.comps, self.d, self.dims_n);
        for c in v.comps.iter_mut() {
            fft::zero_mean(c);
        }
    }

    fn apply_projected(&self, u: &SpecVec, out: &mut SpecVec) {
        self.apply_lop(u, out);
        self.project(out);
    }

    /// Constant-coefficient inverse (exact in Fourier space): divide by
    /// `abar |2 pi f|^2`, project, zero the mean.
    fn precondition(&self, r: &SpecVec, z: &mut SpecVec) {
        let dims = self.dims_n;
        for (zc, rc) in z.comps.iter_mut().zip(r.comps.iter()) {
            zc.clone_from(rc);
            for i in 0..dims[0] {
                for j in 0..dims[1] {
                    for k in 0..dims[2] {
                        let fs = [
                            fft::freq(i, dims[0]) as f64,
                            fft::freq(j, dims[1]) as f64,
                            fft::freq(k, dims[2]) as f64,
                        ];
                        let k2 =
                            (2.0 * PI).powi(2) * (fs[0] * fs[0] + fs[1] * fs[1] + fs[2] * fs[2]);
                        let idx = fft::flat(dims, i, j, k);
                        if k2 == 0.0 {
                            zc[idx] = Complex64::new(0.0, 0.0);
                        } else {
                            zc[idx] /= self.abar * k2;
                        }
                    }
                }
            }
        }
        fft::leray_project(&mut z.comps, self.d, dims);
    }

    /// Right-hand side `F^a = d_i a_ij^{ab}` for the pair `(j, b)`,
    /// in spectral representation on the solve grid.
    fn rhs_for_pair(&self, j: usize, b: usize) -> SpecVec {
        let d = self.d;
        let mut rhs = self.zero_vec();
        match &self.coeff {
            CoeffOnGrid::Constant(_) => rhs,
            CoeffOnGrid::Scalar(c) => {
                // a_ij^{ab} = c d_ij d_ab: F^a = d_ab d_j c.
                let mut s: Vec<Complex64> = c.iter().map(|&v| Complex64::new(v, 0.0)).collect();
                fft::to_spectral(&mut s, self.dims_m);
                let mut t = fft::resample_spectrum(&s, self.dims_m, self.dims_n);
                fft::derivative(&mut t, self.dims_n, j);
                rhs.comps[b] = t;
                rhs
            }
            CoeffOnGrid::Full(vals) => {
                let d4 = d * d * d * d;
                let total_m = fft::total(self.dims_m);
                for a in 0..d {
                    let acc = &mut rhs.comps[a];
                    for i in 0..d {
                        let mut field = vec![Complex64::new(0.0, 0.0); total_m];
                        for (p, f) in field.iter_mut().enumerate() {
                            *f = Complex64::new(
                                vals[p * d4 + ((i * d + j) * d + a) * d + b],
                                0.0,
                            );
                        }
                        fft::to_spectral(&mut field, self.dims_m);
                        let mut t = fft::resample_spectrum(&field, self.dims_m, self.dims_n);
                        fft::derivative(&mut t, self.dims_n, i);
                        for (av, tv) in acc.iter_mut().zip(t.iter()) {
                            *av += tv;
                        }
                    }
                }
                rhs
            }
        }
    }

    /// Recover the pressure from the unprojected residual: `grad pi` is the
    /// curl-free part of `F - L chi`.
    fn recover_pressure(&self, rhs: &SpecVec, chi: &SpecVec) -> (Vec<Complex64>, f64) {
        let d = self.d;
        let dims = self.dims_n;
        let mut lchi = self.zero_vec();
        self.apply_lop(chi, &mut lchi);
        // r = F - L chi
        let mut r = rhs.clone();
        r.axpy(-1.0, &lchi);
        let mut pi = vec![Complex64::new(0.0, 0.0); fft::total(dims)];
        let mut resid2 = 0.0;
        for i in 0..dims[0] {
            for j in 0..dims[1] {
                for k in 0..dims[2] {
                    let fs = [
                        fft::freq(i, dims[0]) as f64,
                        fft::freq(j, dims[1]) as f64,
                        fft::freq(k, dims[2]) as f64,
                    ];
                    let k2: f64 = fs.iter().take(d).map(|f| f * f).sum::<f64>();
                    let idx = fft::flat(dims, i, j, k);
                    if k2 == 0.0 {
                        continue;
                    }
                    let mut kr = Complex64::new(0.0, 0.0);
                    for a in 0..d {
                        kr += 2.0 * PI * fs[a] * r.comps[a][idx];
                    }
                    // pi_hat = -i (k . r) / |k|^2
                    let khat2 = (2.0 * PI).powi(2) * k2;
                    pi[idx] = Complex64::new(0.0, -1.0) * kr / khat2;
                    // Residual of L chi + grad pi - F = -(P r): the part of r
                    // orthogonal to k.
                    for a in 0..d {
                        let proj = r.comps[a][idx] - 2.0 * PI * fs[a] * kr / khat2;
                        resid2 += proj.norm_sqr();
                    }
                }
            }
        }
        (pi, resid2.sqrt())
    }
}

/// Solve the cell problem for all `d^2` pairs. Returns correctors `(chi, pi)`
/// only; use [`effective_tensor`](super::effective_tensor) and friends for
/// the derived quantities.
pub fn solve_cell_problem(
    a: &CoefficientField,
    grid: TorusGrid,
    tol: f64,
) -> Result<CorrectorSet, TorusError> {
    assert!(tol > 0.0, "tolerance must be positive");
    let d = grid.dim();
    assert_eq!(a.dim(), d, "coefficient dimension mismatch");
    let mut cs = CorrectorSet::new_zero(grid);
    if a.is_constant() {
        // The zero trial solves the constant-coefficient cell problem with
        // residual exactly zero.
        return Ok(cs);
    }
    let ctx = CellContext::new(a, grid);

    let pairs: Vec<(usize, usize)> = (0..d)
        .flat_map(|j| (0..d).map(move |b| (j, b)))
        .collect();
    let results: Vec<Result<(SpecVec, Vec<Complex64>, f64), TorusError>> = pairs
        .par_iter()
        .map(|&(j, b)| {
            let mut rhs = ctx.rhs_for_pair(j, b);
            let rhs_full = rhs.clone();
            ctx.project(&mut rhs);
            let bnorm = rhs.norm();
            let opts = KrylovOpts {
                tol: (tol / bnorm.max(1e-300)).min(1.0),
                max_iter: 2000,
                restart: 20,
            };
            let apply = |x: &SpecVec, y: &mut SpecVec| ctx.apply_projected(x, y);
            let precond = |x: &SpecVec, y: &mut SpecVec| ctx.precondition(x, y);
            let (chi, stats) = krylov::solve_robust(&apply, &precond, &rhs, None, &opts)
                .map_err(|e| match e {
                    krylov::SolveError::NoConvergence {
                        residual,
                        target,
                        iterations,
                    } => TorusError::Convergence {
                        pair: (j, b),
                        residual,
                        target,
                        iterations,
                    },
                    krylov::SolveError::Breakdown(_) => TorusError::Convergence {
                        pair: (j, b),
                        residual: f64::NAN,
                        target: tol,
                        iterations: 0,
                    },
                })?;
            let _ = stats;
            let (pi, resid) = ctx.recover_pressure(&rhs_full, &chi);
            Ok((chi, pi, resid))
        })
        .collect();

    for (&(j, b), res) in pairs.iter().zip(results.into_iter()) {
        let (chi, pi, resid) = res?;
        for g in 0..d {
            *cs.chi_mut(j, b, g) = fft::field_of(&chi.comps[g], grid.dims());
        }
        *cs.pi_mut(j, b) = fft::field_of(&pi, grid.dims());
        cs.residuals[j * d + b] = resid;
    }
    Ok(cs)
}

/// Effective tensor: grid average of `a_ij^{ab} + a_ik^{ag} d_k chi_j^{gb}`,
/// computed with dealiased quadrature so products are averaged exactly.
pub fn effective_tensor(a: &CoefficientField, cs: &CorrectorSet) -> Tensor4 {
    if let Some(t) = a.constant_tensor() {
        return t.clone();
    }
    let (a_hat, _) = flux_assembly(a, cs, false);
    a_hat
}

/// Flux tensor `b_ij^{ab}(y)` on the solve grid; its grid mean vanishes by
/// construction of the effective tensor.
pub fn flux_tensor(a: &CoefficientField, cs: &CorrectorSet) -> FluxField {
    let d = cs.dim();
    if a.is_constant() {
        return FluxField {
            grid: cs.grid,
            comps: vec![vec![0.0; cs.grid.total()]; d * d * d * d],
            a_hat: a.constant_tensor().unwrap().clone(),
        };
    }
    let (a_hat, comps) = flux_assembly(a, cs, true);
    FluxField {
        grid: cs.grid,
        comps: comps.unwrap(),
        a_hat,
    }
}

/// Shared assembly: returns the effective tensor and optionally the
/// truncated flux fields with the mean removed.
fn flux_assembly(
    a: &CoefficientField,
    cs: &CorrectorSet,
    keep_fields: bool,
) -> (Tensor4, Option<Vec<Vec<f64>>>) {
    let grid = cs.grid;
    let d = grid.dim();
    let ctx = CellContext::new(a, grid);
    let dims_n = ctx.dims_n;
    let dims_m = ctx.dims_m;
    let total_m = fft::total(dims_m);
    let mut a_hat = Tensor4::zeros(d);
    let mut fields = if keep_fields {
        Some(vec![vec![0.0; grid.total()]; d * d * d * d])
    } else {
        None
    };

    for j in 0..d {
        for b in 0..d {
            // Spectral chi for this pair.
            let chi = SpecVec {
                comps: (0..d)
                    .map(|g| fft::spectrum_of(cs.chi(j, b, g), dims_n))
                    .collect(),
            };
            let grad = ctx.gradients_on_m(&chi);
            // flux^{a i} = a_ik^{ag} (d_k chi^g + d_k P^g), with
            // d_k P_j^b^g = delta_kj delta_gb.
            for i in 0..d {
                for al in 0..d {
                    let mut vals = vec![0.0; total_m];
                    match &ctx.coeff {
                        CoeffOnGrid::Scalar(c) => {
                            for p in 0..total_m {
                                let mut g_ia = grad[i][al][p].re;
                                if i == j && al == b {
                                    g_ia += 1.0;
                                }
                                vals[p] = c[p] * g_ia;
                            }
                        }
                        CoeffOnGrid::Constant(t) => {
                            for p in 0..total_m {
                                let mut s = 0.0;
                                for k in 0..d {
                                    for g in 0..d {
                                        let mut gv = grad[k][g][p].re;
                                        if k == j && g == b {
                                            gv += 1.0;
                                        }
                                        s += t.get(i, k, al, g) * gv;
                                    }
                                }
                                vals[p] = s;
                            }
                        }
                        CoeffOnGrid::Full(av) => {
                            let d4 = d * d * d * d;
                            for p in 0..total_m {
                                let t = &av[p * d4..(p + 1) * d4];
                                let mut s = 0.0;
                                for k in 0..d {
                                    for g in 0..d {
                                        let mut gv = grad[k][g][p].re;
                                        if k == j && g == b {
                                            gv += 1.0;
                                        }
                                        s += t[((i * d + k) * d + al) * d + g] * gv;
                                    }
                                }
                                vals[p] = s;
                            }
                        }
                    }
                    let mean = vals.iter().sum::<f64>() / total_m as f64;
                    *a_hat.get_mut(i, j, al, b) = mean;
                    if let Some(fields) = fields.as_mut() {
                        let mut spec = fft::spectrum_of(&vals, dims_m);
                        fft::zero_mean(&mut spec);
                        let trunc = fft::resample_spectrum(&spec, dims_m, dims_n);
                        fields[((i * d + j) * d + al) * d + b] = fft::field_of(&trunc, dims_n);
                    }
                }
            }
        }
    }
    (a_hat, fields)
}

/// Dual correctors via the Fourier-space construction:
/// `q_ij^b = d_i Delta^{-1} pi_j^b`, `c = b - d_a q`, `f = Delta^{-1} c`,
/// `phi_kij = d_k f_ij - d_i f_kj`. The identities
/// `b = d_k phi_kij + d_a q_ij` and `phi_kij = -phi_ikj` hold exactly in
/// this representation.
pub fn dual_correctors(cs: &CorrectorSet, b: &FluxField) -> Result<DualCorrectors, TorusError> {
    let grid = cs.grid;
    let d = grid.dim();
    let dims = grid.dims();

    // Reject flux input whose mean was not removed.
    for comp in &b.comps {
        let mean = super::field_mean(comp);
        let max = super::max_abs(comp);
        if max > 0.0 && mean.abs() > 1e-10 * max {
            return Err(TorusError::Normalization { mean, max });
        }
    }

    // q_ij^b from the corrector pressures.
    let mut q = vec![vec![0.0; grid.total()]; d * d * d];
    let mut q_spec = vec![Vec::new(); d * d * d];
    for j in 0..d {
        for be in 0..d {
            let mut pihat = fft::spectrum_of(cs.pi(j, be), dims);
            fft::inv_laplacian(&mut pihat, dims);
            for i in 0..d {
                let mut s = pihat.clone();
                fft::derivative(&mut s, dims, i);
                q[(i * d + j) * d + be] = fft::field_of(&s, dims);
                q_spec[(i * d + j) * d + be] = s;
            }
        }
    }

    // f_ij^{ab} = Delta^{-1} (b_ij^{ab} - d_a q_ij^b), then
    // phi_kij^{ab} = d_k f_ij^{ab} - d_i f_kj^{ab}.
    let mut f_spec = vec![Vec::new(); d * d * d * d];
    for i in 0..d {
        for j in 0..d {
            for al in 0..d {
                for be in 0..d {
                    let mut c = fft::spectrum_of(b.get(i, j, al, be), dims);
                    let mut dq = q_spec[(i * d + j) * d + be].clone();
                    fft::derivative(&mut dq, dims, al);
                    for (cv, dv) in c.iter_mut().zip(dq.iter()) {
                        *cv -= dv;
                    }
                    fft::inv_laplacian(&mut c, dims);
                    f_spec[((i * d + j) * d + al) * d + be] = c;
                }
            }
        }
    }

    let mut phi = vec![vec![0.0; grid.total()]; d * d * d * d * d];
    for k in 0..d {
        for i in 0..d {
            for j in 0..d {
                for al in 0..d {
                    for be in 0..d {
                        let mut dk = f_spec[((i * d + j) * d + al) * d + be].clone();
                        fft::derivative(&mut dk, dims, k);
                        let mut di = f_spec[((k * d + j) * d + al) * d + be].clone();
                        fft::derivative(&mut di, dims, i);
                        for (a, b) in dk.iter_mut().zip(di.iter()) {
                            *a -= b;
                        }
                        phi[(((k * d + i) * d + j) * d + al) * d + be] =
                            fft::field_of(&dk, dims);
                    }
                }
            }
        }
    }

    Ok(DualCorrectors { grid, phi, q })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coeff::{make_coefficient, FamilySpec};
    use crate::torus::{field_mean, max_abs};

    fn trig_field(d: usize) -> CoefficientField {
        make_coefficient(&FamilySpec::trig(0.5), d).unwrap()
    }

    #[test]
    fn constant_coefficients_give_zero_correctors() {
        let a = make_coefficient(&FamilySpec::constant_identity(), 2).unwrap();
        let grid = TorusGrid::new(2, 16).unwrap();
        let cs = solve_cell_problem(&a, grid, 1e-8).unwrap();
        for j in 0..2 {
            for b in 0..2 {
                assert!(max_abs(cs.pi(j, b)) <= 1e-10);
                for g in 0..2 {
                    assert!(max_abs(cs.chi(j, b, g)) <= 1e-10);
                }
            }
        }
        let a_hat = effective_tensor(&a, &cs);
        assert!(a_hat.max_abs_diff(a.constant_tensor().unwrap()) <= 1e-10);
        let b = flux_tensor(&a, &cs);
        for c in &b.comps {
            assert!(max_abs(c) <= 1e-10);
        }
        let dual = dual_correctors(&cs, &b).unwrap();
        for c in dual.phi.iter().chain(dual.q.iter()) {
            assert!(max_abs(c) <= 1e-10);
        }
    }

    #[test]
    fn trig_cell_problem_meets_residual_and_structure() {
        let a = trig_field(2);
        let grid = TorusGrid::new(2, 64).unwrap();
        let tol = 1e-9;
        let cs = solve_cell_problem(&a, grid, tol).unwrap();
        for r in &cs.residuals {
            assert!(*r <= tol, "residual {r} above tolerance");
        }
        // Mean-zero invariants.
        assert!(cs.mean_defect() <= 1e-12);
        // Nontrivial correctors.
        assert!(max_abs(cs.chi(0, 0, 0)) > 1e-3);
    }

    #[test]
    fn trig_solution_is_spectrally_converged() {
        // Analytic coefficients: the N=32 and N=64 solutions agree far below
        // any polynomial rate at these sizes.
        let a = trig_field(2);
        let cs32 = solve_cell_problem(&a, TorusGrid::new(2, 32).unwrap(), 1e-11).unwrap();
        let cs64 = solve_cell_problem(&a, TorusGrid::new(2, 64).unwrap(), 1e-11).unwrap();
        let d32 = cs32.grid.dims();
        let d64 = cs64.grid.dims();
        let mut worst = 0.0f64;
        for i in 0..32 {
            for j in 0..32 {
                let coarse = cs32.chi(0, 0, 0)[fft::flat(d32, i, j, 0)];
                let fine = cs64.chi(0, 0, 0)[fft::flat(d64, 2 * i, 2 * j, 0)];
                worst = worst.max((coarse - fine).abs());
            }
        }
        assert!(
            worst <= 1e-8,
            "spectral self-convergence defect {worst} too large"
        );
    }

    #[test]
    fn effective_tensor_within_ellipticity_window() {
        let a = trig_field(2);
        let grid = TorusGrid::new(2, 64).unwrap();
        let cs = solve_cell_problem(&a, grid, 1e-9).unwrap();
        let a_hat = effective_tensor(&a, &cs);
        let (mu_lo, mu_hi) = crate::coeff::check_ellipticity(&a, 200).unwrap();
        let (lo, hi) = a_hat.eigen_bounds();
        assert!(
            lo >= mu_lo - 1e-8 && hi <= mu_hi + 1e-8,
            "effective eigenvalues [{lo}, {hi}] outside [{mu_lo}, {mu_hi}]"
        );
    }

    #[test]
    fn flux_tensor_mean_zero_and_divergence_identity() {
        let a = trig_field(2);
        let grid = TorusGrid::new(2, 64).unwrap();
        let tol = 1e-9;
        let cs = solve_cell_problem(&a, grid, tol).unwrap();
        let b = flux_tensor(&a, &cs);
        for c in &b.comps {
            let max = max_abs(c);
            if max > 0.0 {
                assert!(field_mean(c).abs() <= 1e-10 * max);
            }
        }
        // d_i b_ij^{ab} = d_a pi_j^b up to the solver residual.
        let dims = grid.dims();
        let d = 2;
        for j in 0..d {
            for be in 0..d {
                for al in 0..d {
                    let mut div = vec![Complex64::new(0.0, 0.0); grid.total()];
                    for i in 0..d {
                        let mut s = fft::spectrum_of(b.get(i, j, al, be), dims);
                        fft::derivative(&mut s, dims, i);
                        for (dv, sv) in div.iter_mut().zip(s.iter()) {
                            *dv += sv;
                        }
                    }
                    let mut dpi = fft::spectrum_of(cs.pi(j, be), dims);
                    fft::derivative(&mut dpi, dims, al);
                    for (dv, pv) in div.iter_mut().zip(dpi.iter()) {
                        *dv -= pv;
                    }
                    let defect = fft::spectral_l2(&div);
                    assert!(
                        defect <= 20.0 * tol,
                        "divergence identity defect {defect}"
                    );
                }
            }
        }
    }

    #[test]
    fn dual_corrector_identities() {
        let a = trig_field(2);
        let grid = TorusGrid::new(2, 64).unwrap();
        let cs = solve_cell_problem(&a, grid, 1e-9).unwrap();
        let b = flux_tensor(&a, &cs);
        let dual = dual_correctors(&cs, &b).unwrap();
        let d = 2;
        let dims = grid.dims();

        // Antisymmetry is exact by the constructive formula.
        for k in 0..d {
            for i in 0..d {
                for j in 0..d {
                    for al in 0..d {
                        for be in 0..d {
                            let pk = dual.phi(k, i, j, al, be);
                            let pi_ = dual.phi(i, k, j, al, be);
                            for (x, y) in pk.iter().zip(pi_.iter()) {
                                assert!((x + y).abs() <= 1e-12 * (1.0 + x.abs()));
                            }
                        }
                    }
                }
            }
        }

        // b = d_k phi_kij + d_a q_ij, measured spectrally.
        for i in 0..d {
            for j in 0..d {
                for al in 0..d {
                    for be in 0..d {
                        let mut recon = vec![Complex64::new(0.0, 0.0); grid.total()];
                        for k in 0..d {
                            let mut s = fft::spectrum_of(dual.phi(k, i, j, al, be), dims);
                            fft::derivative(&mut s, dims, k);
                            for (r, v) in recon.iter_mut().zip(s.iter()) {
                                *r += v;
                            }
                        }
                        let mut dq = fft::spectrum_of(dual.q(i, j, be), dims);
                        fft::derivative(&mut dq, dims, al);
                        for (r, v) in recon.iter_mut().zip(dq.iter()) {
                            *r += v;
                        }
                        let mut bs = fft::spectrum_of(b.get(i, j, al, be), dims);
                        for (r, v) in recon.iter_mut().zip(bs.iter_mut()) {
                            *r -= *v;
                        }
                        let defect = fft::spectral_l2(&recon);
                        assert!(defect <= 1e-8, "dual identity defect {defect}");
                    }
                }
            }
        }

        // d_i q_ij^b reproduces pi_j^b.
        for j in 0..d {
            for be in 0..d {
                let mut acc = vec![Complex64::new(0.0, 0.0); grid.total()];
                for i in 0..d {
                    let mut s = fft::spectrum_of(dual.q(i, j, be), dims);
                    fft::derivative(&mut s, dims, i);
                    for (a, v) in acc.iter_mut().zip(s.iter()) {
                        *a += v;
                    }
                }
                let ps = fft::spectrum_of(cs.pi(j, be), dims);
                for (a, v) in acc.iter_mut().zip(ps.iter()) {
                    *a -= v;
                }
                assert!(fft::spectral_l2(&acc) <= 1e-8);
            }
        }
    }

    #[test]
    fn incompressibility_of_correctors() {
        let a = trig_field(2);
        let grid = TorusGrid::new(2, 32).unwrap();
        let cs = solve_cell_problem(&a, grid, 1e-9).unwrap();
        let dims = grid.dims();
        for j in 0..2 {
            for b in 0..2 {
                let mut div = vec![Complex64::new(0.0, 0.0); grid.total()];
                for g in 0..2 {
                    let mut s = fft::spectrum_of(cs.chi(j, b, g), dims);
                    fft::derivative(&mut s, dims, g);
                    for (dv, sv) in div.iter_mut().zip(s.iter()) {
                        *dv += sv;
                    }
                }
                assert!(fft::spectral_l2(&div) <= 1e-10);
            }
        }
    }

    #[test]
    fn cell_solver_works_in_3d() {
        let a = trig_field(3);
        let grid = TorusGrid::new(3, 16).unwrap();
        let tol = 1e-8;
        let cs = solve_cell_problem(&a, grid, tol).unwrap();
        for r in &cs.residuals {
            assert!(*r <= tol);
        }
        let a_hat = effective_tensor(&a, &cs);
        let (lo, hi) = a_hat.eigen_bounds();
        assert!(lo > 0.4 && hi < 1.6);
    }
}
