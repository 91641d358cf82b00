//! The periodic cell problem on the unit torus `Y = (0,1]^d`.
//!
//! Solves, for each pair `(j,b)`, the corrector system
//! `L_1(chi_j^b + P_j^b) + grad pi_j^b = 0`, `div chi_j^b = 0` with mean-zero
//! normalizations, by a Fourier-Galerkin discretization with 3/2 dealiasing.
//! From the correctors it assembles the effective tensor, the mean-zero flux
//! tensor `b`, and the dual correctors `(phi, q)` (constructed in Fourier
//! space, where the defining identities hold exactly).

pub mod fft;
mod cell;

use crate::coeff::CoefficientField;
use crate::tensor::Tensor4;
use fft::{dims, Dims};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

pub use cell::{dual_correctors, effective_tensor, flux_tensor, solve_cell_problem};

#[derive(Debug, thiserror::Error)]
pub enum TorusError {
    #[error("invalid torus grid: {0}")]
    BadGrid(String),
    #[error("cell solve for pair (j,b) = {pair:?} did not converge: residual {residual:.3e} (target {target:.3e}) after {iterations} iterations")]
    Convergence {
        pair: (usize, usize),
        residual: f64,
        target: f64,
        iterations: usize,
    },
    #[error("input field has nonzero mean {mean:.3e} (max magnitude {max:.3e})")]
    Normalization { mean: f64, max: f64 },
}

/// Uniform periodic grid on the unit torus: `n` points per axis, spacing
/// `h = 1/n`, indices wrap around.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TorusGrid {
    d: usize,
    n: usize,
}

impl TorusGrid {
    pub fn new(d: usize, n: usize) -> Result<Self, TorusError> {
        if d != 2 && d != 3 {
            return Err(TorusError::BadGrid(format!("dimension {d} not in {{2,3}}")));
        }
        if n < 8 {
            return Err(TorusError::BadGrid(format!("n = {n} below minimum 8")));
        }
        if !n.is_power_of_two() {
            return Err(TorusError::BadGrid(format!("n = {n} is not a power of two")));
        }
        Ok(TorusGrid { d, n })
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn h(&self) -> f64 {
        1.0 / self.n as f64
    }

    pub fn dims(&self) -> Dims {
        dims(self.d, self.n)
    }

    pub fn total(&self) -> usize {
        fft::total(self.dims())
    }

    /// Physical coordinates of grid node `(i, j, k)`.
    pub fn point(&self, idx: [usize; 3]) -> Vec<f64> {
        (0..self.d).map(|a| idx[a] as f64 * self.h()).collect()
    }
}

/// Component shape of a periodic field.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum FieldShape {
    Scalar,
    Vector,
    Tensor2,
}

/// Values on torus grid nodes, one array per component.
#[derive(Clone, Debug)]
pub struct PeriodicField {
    pub grid: TorusGrid,
    pub shape: FieldShape,
    pub comps: Vec<Vec<f64>>,
}

impl PeriodicField {
    pub fn zeros(grid: TorusGrid, shape: FieldShape) -> Self {
        let ncomp = match shape {
            FieldShape::Scalar => 1,
            FieldShape::Vector => grid.dim(),
            FieldShape::Tensor2 => grid.dim() * grid.dim(),
        };
        PeriodicField {
            grid,
            shape,
            comps: vec![vec![0.0; grid.total()]; ncomp],
        }
    }

    /// Verify the declared-mean-zero invariant `|mean| <= 1e-12 max|values|`.
    pub fn mean_zero_defect(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for c in &self.comps {
            let mean = field_mean(c);
            let max = max_abs(c);
            if max > 0.0 {
                worst = worst.max(mean.abs() / max);
            }
        }
        worst
    }
}

pub fn field_mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, &x| m.max(x.abs()))
}

/// Correctors of the cell problem and everything derived from them.
///
/// Velocity correctors are indexed by `(j, b, component g)`, pressures by
/// `(j, b)`. The optional parts are filled by [`effective_tensor`],
/// [`flux_tensor`] and [`dual_correctors`] (or [`compute_full`] in one go).
#[derive(Clone, Debug)]
pub struct CorrectorSet {
    pub grid: TorusGrid,
    chi: Vec<Vec<f64>>,
    pi: Vec<Vec<f64>>,
    /// Absolute discrete-L2 residuals of the cell system, per `(j, b)`.
    pub residuals: Vec<f64>,
    pub a_hat: Option<Tensor4>,
    flux: Option<Vec<Vec<f64>>>,
    phi: Option<Vec<Vec<f64>>>,
    q: Option<Vec<Vec<f64>>>,
}

impl CorrectorSet {
    pub(crate) fn new_zero(grid: TorusGrid) -> Self {
        let d = grid.dim();
        let total = grid.total();
        CorrectorSet {
            grid,
            chi: vec![vec![0.0; total]; d * d * d],
            pi: vec![vec![0.0; total]; d * d],
            residuals: vec![0.0; d * d],
            a_hat: None,
            flux: None,
            phi: None,
            q: None,
        }
    }

    pub fn dim(&self) -> usize {
        self.grid.dim()
    }

    /// Component `g` of the corrector velocity `chi_j^b`.
    pub fn chi(&self, j: usize, b: usize, g: usize) -> &[f64] {
        let d = self.dim();
        &self.chi[(j * d + b) * d + g]
    }

    pub(crate) fn chi_mut(&mut self, j: usize, b: usize, g: usize) -> &mut Vec<f64> {
        let d = self.dim();
        &mut self.chi[(j * d + b) * d + g]
    }

    /// Corrector pressure `pi_j^b`.
    pub fn pi(&self, j: usize, b: usize) -> &[f64] {
        let d = self.dim();
        &self.pi[j * d + b]
    }

    pub(crate) fn pi_mut(&mut self, j: usize, b: usize) -> &mut Vec<f64> {
        let d = self.dim();
        &mut self.pi[j * d + b]
    }

    /// Flux tensor component `b_ij^{ab}`, if computed.
    pub fn flux_b(&self, i: usize, j: usize, a: usize, b: usize) -> Option<&[f64]> {
        let d = self.dim();
        self.flux
            .as_ref()
            .map(|f| f[((i * d + j) * d + a) * d + b].as_slice())
    }

    /// Dual corrector `phi_kij^{ab}`, if computed.
    pub fn phi(&self, k: usize, i: usize, j: usize, a: usize, b: usize) -> Option<&[f64]> {
        let d = self.dim();
        self.phi
            .as_ref()
            .map(|f| f[(((k * d + i) * d + j) * d + a) * d + b].as_slice())
    }

    /// Dual pressure `q_ij^b`, if computed.
    pub fn q(&self, i: usize, j: usize, b: usize) -> Option<&[f64]> {
        let d = self.dim();
        self.q.as_ref().map(|f| f[(i * d + j) * d + b].as_slice())
    }

    pub fn has_dual(&self) -> bool {
        self.phi.is_some()
    }

    pub(crate) fn set_flux(&mut self, flux: Vec<Vec<f64>>, a_hat: Tensor4) {
        self.flux = Some(flux);
        self.a_hat = Some(a_hat);
    }

    pub(crate) fn set_dual(&mut self, phi: Vec<Vec<f64>>, q: Vec<Vec<f64>>) {
        self.phi = Some(phi);
        self.q = Some(q);
    }

    /// Spectrum of one stored field (used for trigonometric interpolation of
    /// correctors at arbitrary points).
    pub fn spectrum(&self, values: &[f64]) -> Vec<Complex64> {
        fft::spectrum_of(values, self.grid.dims())
    }

    /// Largest normalized mean over all stored mean-zero fields.
    pub fn mean_defect(&self) -> f64 {
        let mut worst: f64 = 0.0;
        let mut check = |v: &Vec<f64>| {
            let max = max_abs(v);
            if max > 0.0 {
                worst = worst.max(field_mean(v).abs() / max);
            }
        };
        self.chi.iter().for_each(&mut check);
        self.pi.iter().for_each(&mut check);
        if let Some(f) = &self.flux {
            f.iter().for_each(&mut check);
        }
        if let Some(f) = &self.q {
            f.iter().for_each(&mut check);
        }
        worst
    }
}

/// Flux tensor `b_ij^{ab}(y)` on the torus grid together with the effective
/// tensor subtracted from it.
#[derive(Clone, Debug)]
pub struct FluxField {
    pub grid: TorusGrid,
    /// `comps[((i*d+j)*d+a)*d+b]`
    pub comps: Vec<Vec<f64>>,
    pub a_hat: Tensor4,
}

impl FluxField {
    pub fn get(&self, i: usize, j: usize, a: usize, b: usize) -> &[f64] {
        let d = self.grid.dim();
        &self.comps[((i * d + j) * d + a) * d + b]
    }
}

/// Dual correctors `(phi_kij^{ab}, q_ij^b)` on the torus grid.
#[derive(Clone, Debug)]
pub struct DualCorrectors {
    pub grid: TorusGrid,
    /// `phi[(((k*d+i)*d+j)*d+a)*d+b]`, antisymmetric in `(k, i)`.
    pub phi: Vec<Vec<f64>>,
    /// `q[(i*d+j)*d+b]`
    pub q: Vec<Vec<f64>>,
}

impl DualCorrectors {
    pub fn phi(&self, k: usize, i: usize, j: usize, a: usize, b: usize) -> &[f64] {
        let d = self.grid.dim();
        &self.phi[(((k * d + i) * d + j) * d + a) * d + b]
    }

    pub fn q(&self, i: usize, j: usize, b: usize) -> &[f64] {
        let d = self.grid.dim();
        &self.q[(i * d + j) * d + b]
    }
}

/// Solve the cell problem and assemble every derived quantity.
pub fn compute_full(
    a: &CoefficientField,
    grid: TorusGrid,
    tol: f64,
) -> Result<CorrectorSet, TorusError> {
    let mut cs = solve_cell_problem(a, grid, tol)?;
    let flux = flux_tensor(a, &cs);
    let dual = dual_correctors(&cs, &flux)?;
    cs.set_flux(flux.comps, flux.a_hat);
    cs.set_dual(dual.phi, dual.q);
    Ok(cs)
}
