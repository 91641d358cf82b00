//! Periodic coefficient tensors: built-in families, ellipticity checks, and
//! the reduction of incompressible elasticity to a strongly elliptic system.
//!
//! Coefficients are kept as closed-form evaluators; consumers sample them at
//! whatever stencil locations their discretization needs.

use crate::tensor::{kron, Tensor4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

/// Seed for the pseudo-random `xi` / `y` samples used by ellipticity checks,
/// fixed so reports are reproducible.
pub const ELLIPTICITY_SEED: u64 = 0x53484f4d;

#[derive(Debug, thiserror::Error)]
pub enum CoeffError {
    #[error("family parameters produce a non-positive-definite tensor at y = {y:?} (value {value})")]
    NotPositiveDefinite { y: Vec<f64>, value: f64 },
    #[error("ellipticity violated: quadratic form = {value} at y = {y:?}, xi = {xi:?}")]
    EllipticityViolation {
        y: Vec<f64>,
        xi: Vec<f64>,
        value: f64,
    },
    #[error("elasticity symmetry violated at y = {y:?}, indices (i,j,a,b) = {indices:?}: {lhs} vs {rhs}")]
    MalformedElasticity {
        y: Vec<f64>,
        indices: [usize; 4],
        lhs: f64,
        rhs: f64,
    },
    #[error("invalid family parameters: {0}")]
    BadParams(String),
}

/// One cosine-product term of a trigonometric polynomial,
/// `amp * prod_k cos(2 pi freq_k y_k)` (axes with zero frequency are skipped).
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct TrigTerm {
    pub amp: f64,
    pub freq: Vec<i64>,
}

/// A coefficient family, loadable from JSON (`{"name": "trig", "rho": 0.5}`).
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(tag = "name", rename_all = "kebab-case")]
pub enum FamilySpec {
    /// Constant tensor: `scale * identity`, or an explicit flat `d^4` array.
    Constant {
        #[serde(default = "default_scale")]
        scale: f64,
        #[serde(default)]
        tensor: Option<Vec<f64>>,
    },
    /// `a(y) = (1 + rho * s(y)) * identity` with `s` a cosine polynomial,
    /// `sum |amp| <= 1`. Defaults to `s(y) = prod_k cos(2 pi y_k)`.
    Trig {
        rho: f64,
        #[serde(default)]
        terms: Vec<TrigTerm>,
    },
    /// Mollified two-phase scalar contrast alternating on the unit cell.
    SmoothedCheckerboard {
        c_lo: f64,
        c_hi: f64,
        #[serde(default = "default_sharpness")]
        sharpness: f64,
    },
}

fn default_scale() -> f64 {
    1.0
}

fn default_sharpness() -> f64 {
    4.0
}

impl FamilySpec {
    pub fn trig(rho: f64) -> Self {
        FamilySpec::Trig {
            rho,
            terms: Vec::new(),
        }
    }

    pub fn constant_identity() -> Self {
        FamilySpec::Constant {
            scale: 1.0,
            tensor: None,
        }
    }

    /// Short deterministic label used in cache keys and reports.
    pub fn label(&self) -> String {
        match self {
            FamilySpec::Constant { scale, tensor } => {
                if tensor.is_some() {
                    format!("const-tensor{scale}")
                } else {
                    format!("const{scale}")
                }
            }
            FamilySpec::Trig { rho, terms } => format!("trig-rho{rho}-t{}", terms.len()),
            FamilySpec::SmoothedCheckerboard {
                c_lo,
                c_hi,
                sharpness,
            } => format!("checker-{c_lo}-{c_hi}-s{sharpness}"),
        }
    }
}

/// Closed-form scalar modulation `c(y)` for fields of the form
/// `a_ij^{ab}(y) = c(y) delta_ij delta_ab`.
#[derive(Clone, Debug)]
pub enum ScalarCoeff {
    Trig { rho: f64, terms: Vec<TrigTerm> },
    Checkerboard { mid: f64, amp: f64, sharpness: f64 },
}

impl ScalarCoeff {
    pub fn eval(&self, y: &[f64]) -> f64 {
        match self {
            ScalarCoeff::Trig { rho, terms } => {
                let mut s = 0.0;
                for t in terms {
                    let mut p = t.amp;
                    for (k, &f) in t.freq.iter().enumerate().take(y.len()) {
                        if f != 0 {
                            p *= (2.0 * std::f64::consts::PI * f as f64 * y[k]).cos();
                        }
                    }
                    s += p;
                }
                1.0 + rho * s
            }
            ScalarCoeff::Checkerboard {
                mid,
                amp,
                sharpness,
            } => {
                let mut w = 1.0;
                for &yk in y {
                    w *= (2.0 * std::f64::consts::PI * yk).sin();
                }
                mid + amp * (sharpness * w).tanh() / sharpness.tanh()
            }
        }
    }
}

type FullEval = Arc<dyn Fn(&[f64], &mut Tensor4) + Send + Sync>;

/// How a field's tensor values are produced.
#[derive(Clone)]
pub enum Structure {
    /// Constant in `y`.
    Constant(Tensor4),
    /// `c(y) * identity`; the common scalar-viscosity case.
    Scalar(ScalarCoeff),
    /// General `y`-dependent tensor.
    Full(FullEval),
}

/// A periodic coefficient tensor `A(y)` with its ellipticity constant and
/// Hölder metadata. Immutable and safe to share across threads.
#[derive(Clone)]
pub struct CoefficientField {
    d: usize,
    structure: Structure,
    mu: f64,
    /// Hölder exponent; recorded in reports, never enforced.
    pub holder_lambda: f64,
    /// Hölder seminorm bound; recorded in reports, never enforced.
    pub holder_tau: f64,
    family: Option<FamilySpec>,
}

impl std::fmt::Debug for CoefficientField {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CoefficientField")
            .field("d", &self.d)
            .field("mu", &self.mu)
            .field("family", &self.family)
            .finish()
    }
}

impl CoefficientField {
    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn structure(&self) -> &Structure {
        &self.structure
    }

    pub fn family(&self) -> Option<&FamilySpec> {
        self.family.as_ref()
    }

    pub fn is_constant(&self) -> bool {
        matches!(self.structure, Structure::Constant(_))
    }

    pub fn constant_tensor(&self) -> Option<&Tensor4> {
        match &self.structure {
            Structure::Constant(t) => Some(t),
            _ => None,
        }
    }

    /// Evaluate the full tensor at a point (periodic continuation is built
    /// into the evaluators).
    pub fn eval_tensor(&self, y: &[f64], out: &mut Tensor4) {
        match &self.structure {
            Structure::Constant(t) => out.clone_from(t),
            Structure::Scalar(c) => {
                let v = c.eval(y);
                let d = self.d;
                for e in out.as_mut_slice().iter_mut() {
                    *e = 0.0;
                }
                for i in 0..d {
                    for a in 0..d {
                        *out.get_mut(i, i, a, a) = v;
                    }
                }
            }
            Structure::Full(f) => f(y, out),
        }
    }

    /// Scalar modulation `c(y)` when the field has scalar structure.
    pub fn scalar_at(&self, y: &[f64]) -> Option<f64> {
        match &self.structure {
            Structure::Constant(t) => {
                // Only scalar if it is a multiple of the identity.
                let c = t.get(0, 0, 0, 0);
                let mut id = Tensor4::scaled_identity(self.d, c);
                if id.max_abs_diff(t) < 1e-14 * (1.0 + c.abs()) {
                    let _ = &mut id;
                    Some(c)
                } else {
                    None
                }
            }
            Structure::Scalar(f) => Some(f.eval(y)),
            Structure::Full(_) => None,
        }
    }

    /// Mean magnitude proxy used by preconditioners.
    pub fn isotropic_mean(&self) -> f64 {
        match &self.structure {
            Structure::Constant(t) => t.isotropic_proxy(),
            Structure::Scalar(c) => {
                // Average over a coarse lattice.
                let n = 16usize;
                let mut s = 0.0;
                let mut y = vec![0.0; self.d];
                let total = n.pow(self.d as u32);
                for idx in 0..total {
                    let mut r = idx;
                    for yk in y.iter_mut() {
                        *yk = (r % n) as f64 / n as f64;
                        r /= n;
                    }
                    s += c.eval(&y);
                }
                s / total as f64
            }
            Structure::Full(_) => {
                let mut t = Tensor4::zeros(self.d);
                let n = 8usize;
                let mut s = 0.0;
                let mut y = vec![0.0; self.d];
                let total = n.pow(self.d as u32);
                for idx in 0..total {
                    let mut r = idx;
                    for yk in y.iter_mut() {
                        *yk = (r % n) as f64 / n as f64;
                        r /= n;
                    }
                    self.eval_tensor(&y, &mut t);
                    s += t.isotropic_proxy();
                }
                s / total as f64
            }
        }
    }

    /// Coefficients of the adjoint operator, `a*_ij^{ab}(y) = a_ji^{ba}(y)`.
    pub fn adjoint(&self) -> CoefficientField {
        let structure = match &self.structure {
            Structure::Constant(t) => Structure::Constant(t.adjoint()),
            Structure::Scalar(c) => Structure::Scalar(c.clone()),
            Structure::Full(f) => {
                let f = f.clone();
                let d = self.d;
                Structure::Full(Arc::new(move |y: &[f64], out: &mut Tensor4| {
                    let mut t = Tensor4::zeros(d);
                    f(y, &mut t);
                    *out = t.adjoint();
                }))
            }
        };
        CoefficientField {
            d: self.d,
            structure,
            mu: self.mu,
            holder_lambda: self.holder_lambda,
            holder_tau: self.holder_tau,
            family: None,
        }
    }

    pub fn from_constant(t: Tensor4) -> Self {
        let d = t.dim();
        let (lo, hi) = t.eigen_bounds();
        let mu = if lo > 0.0 && hi > 0.0 {
            lo.min(1.0 / hi)
        } else {
            0.0
        };
        CoefficientField {
            d,
            structure: Structure::Constant(t),
            mu,
            holder_lambda: 1.0,
            holder_tau: 0.0,
            family: None,
        }
    }
}

/// Construct a coefficient field from a built-in family.
///
/// The families themselves are artifact choices (reports flag them as such):
/// a constant tensor, a trigonometric scalar modulation, and a mollified
/// two-phase checkerboard.
pub fn make_coefficient(family: &FamilySpec, d: usize) -> Result<CoefficientField, CoeffError> {
    if d != 2 && d != 3 {
        return Err(CoeffError::BadParams(format!("dimension {d} not in {{2,3}}")));
    }
    match family {
        FamilySpec::Constant { scale, tensor } => {
            let t = match tensor {
                Some(flat) => {
                    if flat.len() != d * d * d * d {
                        return Err(CoeffError::BadParams(format!(
                            "constant tensor needs {} entries, got {}",
                            d * d * d * d,
                            flat.len()
                        )));
                    }
                    let mut t = Tensor4::from_flat(d, flat.clone());
                    t.scale(*scale);
                    t
                }
                None => Tensor4::scaled_identity(d, *scale),
            };
            let (lo, _hi) = t.eigen_bounds();
            if lo <= 0.0 {
                return Err(CoeffError::NotPositiveDefinite {
                    y: vec![0.0; d],
                    value: lo,
                });
            }
            let mut f = CoefficientField::from_constant(t);
            f.family = Some(family.clone());
            Ok(f)
        }
        FamilySpec::Trig { rho, terms } => {
            if !(0.0..1.0).contains(rho) {
                return Err(CoeffError::BadParams(format!("rho = {rho} not in [0,1)")));
            }
            let terms = if terms.is_empty() {
                vec![TrigTerm {
                    amp: 1.0,
                    freq: vec![1; d],
                }]
            } else {
                terms.clone()
            };
            let amp_sum: f64 = terms.iter().map(|t| t.amp.abs()).sum();
            if amp_sum > 1.0 + 1e-12 {
                return Err(CoeffError::BadParams(format!(
                    "sum of |amp| = {amp_sum} exceeds 1; |rho * s| < 1 no longer guaranteed"
                )));
            }
            let coeff = ScalarCoeff::Trig {
                rho: *rho,
                terms: terms.clone(),
            };
            scan_positive(&coeff, d)?;
            let lo = 1.0 - rho * amp_sum;
            let hi = 1.0 + rho * amp_sum;
            let lip: f64 = terms
                .iter()
                .map(|t| {
                    t.amp.abs()
                        * 2.0
                        * std::f64::consts::PI
                        * t.freq.iter().map(|f| f.abs() as f64).sum::<f64>()
                })
                .sum();
            Ok(CoefficientField {
                d,
                structure: Structure::Scalar(coeff),
                mu: lo.min(1.0 / hi),
                holder_lambda: 1.0,
                holder_tau: rho * lip,
                family: Some(FamilySpec::Trig { rho: *rho, terms }),
            })
        }
        FamilySpec::SmoothedCheckerboard {
            c_lo,
            c_hi,
            sharpness,
        } => {
            if !(*c_lo > 0.0 && c_hi >= c_lo) {
                // Locate a violating sample for the error message.
                let y = vec![0.25; d];
                return Err(CoeffError::NotPositiveDefinite {
                    y,
                    value: *c_lo,
                });
            }
            if *sharpness <= 0.0 {
                return Err(CoeffError::BadParams("sharpness must be positive".into()));
            }
            let coeff = ScalarCoeff::Checkerboard {
                mid: 0.5 * (c_lo + c_hi),
                amp: 0.5 * (c_hi - c_lo),
                sharpness: *sharpness,
            };
            Ok(CoefficientField {
                d,
                structure: Structure::Scalar(coeff),
                mu: c_lo.min(1.0 / c_hi),
                holder_lambda: 1.0,
                holder_tau: (c_hi - c_lo) * sharpness * std::f64::consts::PI * d as f64,
                family: Some(family.clone()),
            })
        }
    }
}

/// Scan a scalar coefficient on a lattice and reject non-positive values,
/// reporting the violating point.
fn scan_positive(c: &ScalarCoeff, d: usize) -> Result<(), CoeffError> {
    let n = 32usize;
    let mut y = vec![0.0; d];
    for idx in 0..n.pow(d as u32) {
        let mut r = idx;
        for yk in y.iter_mut() {
            *yk = (r % n) as f64 / n as f64;
            r /= n;
        }
        let v = c.eval(&y);
        if v <= 0.0 {
            return Err(CoeffError::NotPositiveDefinite { y: y.clone(), value: v });
        }
    }
    Ok(())
}

/// Empirical ellipticity constants over sampled `(y, xi)` pairs.
///
/// `y` ranges over a fixed lattice plus `samples` seeded pseudo-random
/// points; `xi` over all canonical basis matrices plus seeded random
/// matrices. Constant fields return their exact eigen-bounds.
pub fn check_ellipticity(
    a: &CoefficientField,
    samples: usize,
) -> Result<(f64, f64), CoeffError> {
    assert!(samples >= 1, "samples must be >= 1");
    let d = a.dim();
    if let Structure::Constant(t) = &a.structure {
        let (lo, hi) = t.eigen_bounds();
        if lo <= 0.0 {
            return Err(CoeffError::EllipticityViolation {
                y: vec![0.0; d],
                xi: vec![0.0; d * d],
                value: lo,
            });
        }
        return Ok((lo, hi));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(ELLIPTICITY_SEED);
    let mut ys: Vec<Vec<f64>> = Vec::new();
    let lattice = 16usize;
    let mut y = vec![0.0; d];
    for idx in 0..lattice.pow(d as u32) {
        let mut r = idx;
        for yk in y.iter_mut() {
            *yk = (r % lattice) as f64 / lattice as f64;
            r /= lattice;
        }
        ys.push(y.clone());
    }
    for _ in 0..samples {
        ys.push((0..d).map(|_| rng.gen::<f64>()).collect());
    }

    let mut xis: Vec<Vec<f64>> = Vec::new();
    for k in 0..d * d {
        let mut xi = vec![0.0; d * d];
        xi[k] = 1.0;
        xis.push(xi);
    }
    for _ in 0..32 {
        let mut xi: Vec<f64> = (0..d * d).map(|_| rng.gen::<f64>() - 0.5).collect();
        let n: f64 = xi.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-12 {
            for x in &mut xi {
                *x /= n;
            }
            xis.push(xi);
        }
    }

    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    let mut witness: Option<(Vec<f64>, Vec<f64>)> = None;
    let mut t = Tensor4::zeros(d);
    for y in &ys {
        match &a.structure {
            Structure::Scalar(c) => {
                // The quadratic form equals c(y)|xi|^2 for every xi.
                let v = c.eval(y);
                if v < lo {
                    lo = v;
                    witness = Some((y.clone(), xis[0].clone()));
                }
                hi = hi.max(v);
            }
            _ => {
                a.eval_tensor(y, &mut t);
                for xi in &xis {
                    let n2: f64 = xi.iter().map(|x| x * x).sum();
                    let q = t.quadratic_form(xi) / n2;
                    if q < lo {
                        lo = q;
                        witness = Some((y.clone(), xi.clone()));
                    }
                    hi = hi.max(q);
                }
            }
        }
    }
    if lo <= 0.0 {
        let (y, xi) = witness.unwrap();
        return Err(CoeffError::EllipticityViolation { y, xi, value: lo });
    }
    Ok((lo, hi))
}

type ElasticityEval = Arc<dyn Fn(&[f64], &mut Tensor4) + Send + Sync>;

/// A tensor satisfying the elasticity symmetries
/// `b_ij^{ab} = b_ji^{ba} = b_{aj}^{ib}` with ellipticity on symmetric
/// matrices only.
#[derive(Clone)]
pub struct ElasticityTensor {
    d: usize,
    pub mu: f64,
    eval: ElasticityEvalKind,
}

#[derive(Clone)]
enum ElasticityEvalKind {
    Constant(Tensor4),
    Varying(ElasticityEval),
}

impl ElasticityTensor {
    pub fn dim(&self) -> usize {
        self.d
    }

    /// Isotropic tensor `b_ij^{ab} = mu_e (d_ij d_ab + d_ib d_ja) + lam d_ia d_jb`.
    pub fn isotropic(d: usize, mu_e: f64, lam: f64) -> Self {
        let t = Tensor4::from_fn(d, |i, j, a, b| {
            mu_e * (kron(i, j) * kron(a, b) + kron(i, b) * kron(j, a))
                + lam * kron(i, a) * kron(j, b)
        });
        ElasticityTensor {
            d,
            mu: mu_e,
            eval: ElasticityEvalKind::Constant(t),
        }
    }

    pub fn from_tensor(t: Tensor4, mu: f64) -> Self {
        ElasticityTensor {
            d: t.dim(),
            mu,
            eval: ElasticityEvalKind::Constant(t),
        }
    }

    pub fn from_eval(d: usize, mu: f64, eval: ElasticityEval) -> Self {
        ElasticityTensor {
            d,
            mu,
            eval: ElasticityEvalKind::Varying(eval),
        }
    }

    pub fn eval_tensor(&self, y: &[f64], out: &mut Tensor4) {
        match &self.eval {
            ElasticityEvalKind::Constant(t) => out.clone_from(t),
            ElasticityEvalKind::Varying(f) => f(y, out),
        }
    }

    fn check_symmetries(&self, y: &[f64]) -> Result<(), CoeffError> {
        let d = self.d;
        let mut t = Tensor4::zeros(d);
        self.eval_tensor(y, &mut t);
        let tol = 1e-12;
        for i in 0..d {
            for j in 0..d {
                for a in 0..d {
                    for b in 0..d {
                        let v = t.get(i, j, a, b);
                        let major = t.get(j, i, b, a);
                        if (v - major).abs() > tol {
                            return Err(CoeffError::MalformedElasticity {
                                y: y.to_vec(),
                                indices: [i, j, a, b],
                                lhs: v,
                                rhs: major,
                            });
                        }
                        let minor = t.get(a, j, i, b);
                        if (v - minor).abs() > tol {
                            return Err(CoeffError::MalformedElasticity {
                                y: y.to_vec(),
                                indices: [i, j, a, b],
                                lhs: v,
                                rhs: minor,
                            });
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

/// Reduce an elasticity tensor to a strongly elliptic Stokes coefficient:
/// `b~_ij^{ab} = b_ij^{ab} + (mu/2) d_ia d_jb - (mu/2) d_ib d_ja`.
///
/// The antisymmetric correction annihilates symmetric gradients, so the
/// Dirichlet solution is unchanged while strong ellipticity is gained.
pub fn elasticity_reduce(b: &ElasticityTensor) -> Result<CoefficientField, CoeffError> {
    let d = b.dim();
    // Validate the elasticity symmetries pointwise.
    let check_points: Vec<Vec<f64>> = match &b.eval {
        ElasticityEvalKind::Constant(_) => vec![vec![0.0; d]],
        ElasticityEvalKind::Varying(_) => {
            let mut pts = Vec::new();
            let n = 5;
            let mut y = vec![0.0; d];
            for idx in 0..n_pow(n, d) {
                let mut r = idx;
                for yk in y.iter_mut() {
                    *yk = (r % n) as f64 / n as f64 + 0.013;
                    r /= n;
                }
                pts.push(y.clone());
            }
            pts
        }
    };
    for y in &check_points {
        b.check_symmetries(y)?;
    }

    let mu = b.mu;
    let correction = move |i: usize, j: usize, a: usize, bb: usize| {
        0.5 * mu * (kron(i, a) * kron(j, bb) - kron(i, bb) * kron(j, a))
    };

    let field = match &b.eval {
        ElasticityEvalKind::Constant(t) => {
            let mut red = t.clone();
            for i in 0..d {
                for j in 0..d {
                    for a in 0..d {
                        for bb in 0..d {
                            *red.get_mut(i, j, a, bb) += correction(i, j, a, bb);
                        }
                    }
                }
            }
            let (lo, _) = red.eigen_bounds();
            if lo <= 0.0 {
                return Err(CoeffError::NotPositiveDefinite {
                    y: vec![0.0; d],
                    value: lo,
                });
            }
            CoefficientField::from_constant(red)
        }
        ElasticityEvalKind::Varying(f) => {
            let f = f.clone();
            let eval: FullEval = Arc::new(move |y: &[f64], out: &mut Tensor4| {
                f(y, out);
                for i in 0..d {
                    for j in 0..d {
                        for a in 0..d {
                            for bb in 0..d {
                                *out.get_mut(i, j, a, bb) += correction(i, j, a, bb);
                            }
                        }
                    }
                }
            });
            let mut field = CoefficientField {
                d,
                structure: Structure::Full(eval),
                mu: 0.0,
                holder_lambda: 1.0,
                holder_tau: 0.0,
                family: None,
            };
            let (lo, hi) = check_ellipticity(&field, 64)?;
            field.mu = lo.min(1.0 / hi);
            field
        }
    };
    Ok(field)
}

fn n_pow(n: usize, d: usize) -> usize {
    n.pow(d as u32)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_identity_is_exact() {
        let a = make_coefficient(&FamilySpec::constant_identity(), 2).unwrap();
        let (lo, hi) = check_ellipticity(&a, 10).unwrap();
        assert!((lo - 1.0).abs() < 1e-13);
        assert!((hi - 1.0).abs() < 1e-13);
    }

    #[test]
    fn scaled_identity_scales_bounds() {
        let fam = FamilySpec::Constant {
            scale: 2.0,
            tensor: None,
        };
        let a = make_coefficient(&fam, 3).unwrap();
        let (lo, hi) = check_ellipticity(&a, 10).unwrap();
        assert!((lo - 2.0).abs() < 1e-13);
        assert!((hi - 2.0).abs() < 1e-13);
    }

    #[test]
    fn trig_zero_amplitude_matches_identity() {
        let a = make_coefficient(&FamilySpec::trig(0.0), 3).unwrap();
        let mut t = Tensor4::zeros(3);
        a.eval_tensor(&[0.21, 0.47, 0.83], &mut t);
        assert!(t.max_abs_diff(&Tensor4::identity(3)) < 1e-14);
    }

    #[test]
    fn trig_bounds_match_grid_scan_oracle() {
        // Oracle: dense scan of 1 + 0.5 cos(2pi y1) cos(2pi y2) on a 1024^2
        // grid. The extrema sit on lattice points, so the scan is exact:
        // min = 0.5 at (1/2, 0), max = 1.5 at (0, 0).
        let a = make_coefficient(&FamilySpec::trig(0.5), 2).unwrap();
        let coeff = match a.structure() {
            Structure::Scalar(c) => c.clone(),
            _ => panic!("trig family should have scalar structure"),
        };
        let n = 1024usize;
        let mut scan_lo = f64::INFINITY;
        let mut scan_hi = f64::NEG_INFINITY;
        for i in 0..n {
            for j in 0..n {
                let v = coeff.eval(&[i as f64 / n as f64, j as f64 / n as f64]);
                scan_lo = scan_lo.min(v);
                scan_hi = scan_hi.max(v);
            }
        }
        assert!((scan_lo - 0.5).abs() < 1e-12);
        assert!((scan_hi - 1.5).abs() < 1e-12);

        let (lo, hi) = check_ellipticity(&a, 200).unwrap();
        assert!((lo - scan_lo).abs() <= 0.01 * scan_lo);
        assert!((hi - scan_hi).abs() <= 0.01 * scan_hi);
    }

    #[test]
    fn trig_is_periodic_at_integer_shifts() {
        let a = make_coefficient(&FamilySpec::trig(0.5), 2).unwrap();
        let mut t0 = Tensor4::zeros(2);
        let mut t1 = Tensor4::zeros(2);
        for (y, z) in [([0.3, 0.7], [1.3, -0.3]), ([0.11, 0.95], [3.11, 2.95])] {
            a.eval_tensor(&y, &mut t0);
            a.eval_tensor(&z, &mut t1);
            assert!(t0.max_abs_diff(&t1) < 1e-12);
        }
    }

    #[test]
    fn checkerboard_within_declared_range() {
        let fam = FamilySpec::SmoothedCheckerboard {
            c_lo: 0.25,
            c_hi: 2.5,
            sharpness: 4.0,
        };
        let a = make_coefficient(&fam, 2).unwrap();
        let (lo, hi) = check_ellipticity(&a, 500).unwrap();
        assert!(lo >= 0.25 - 1e-12 && hi <= 2.5 + 1e-12);
        assert!(hi > 1.5, "contrast should be visible in samples");
    }

    #[test]
    fn rejects_bad_parameters_with_witness() {
        let fam = FamilySpec::SmoothedCheckerboard {
            c_lo: -0.5,
            c_hi: 1.0,
            sharpness: 4.0,
        };
        match make_coefficient(&fam, 2) {
            Err(CoeffError::NotPositiveDefinite { .. }) => {}
            other => panic!("expected NotPositiveDefinite, got {:?}", other.map(|_| ())),
        }
        assert!(make_coefficient(&FamilySpec::trig(1.3), 2).is_err());
    }

    #[test]
    fn elasticity_reduce_adds_exact_antisymmetric_part() {
        // Isotropic B with mu = 1: the reduced tensor differs from B exactly
        // by (1/2)(d_ia d_jb - d_ib d_ja).
        let b = ElasticityTensor::isotropic(2, 1.0, 0.7);
        let reduced = elasticity_reduce(&b).unwrap();
        let t = reduced.constant_tensor().unwrap();
        let mut bt = Tensor4::zeros(2);
        b.eval_tensor(&[0.0, 0.0], &mut bt);
        for i in 0..2 {
            for j in 0..2 {
                for a in 0..2 {
                    for bb in 0..2 {
                        let expect = bt.get(i, j, a, bb)
                            + 0.5 * (kron(i, a) * kron(j, bb) - kron(i, bb) * kron(j, a));
                        assert!((t.get(i, j, a, bb) - expect).abs() < 1e-14);
                    }
                }
            }
        }
    }

    #[test]
    fn reduction_agrees_on_symmetric_matrices() {
        // The correction is antisymmetric in (i, j), so contracting those
        // slots against any symmetric matrix annihilates it exactly.
        let b = ElasticityTensor::isotropic(3, 1.0, 0.4);
        let reduced = elasticity_reduce(&b).unwrap();
        let rt = reduced.constant_tensor().unwrap();
        let mut bt = Tensor4::zeros(3);
        b.eval_tensor(&[0.0, 0.0, 0.0], &mut bt);
        let sym = [
            [1.0, 0.3, -0.2, 0.3, 2.0, 0.5, -0.2, 0.5, -1.0],
            [0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0],
        ];
        let d = 3;
        for xi in sym {
            for al in 0..d {
                for be in 0..d {
                    let mut qb = 0.0;
                    let mut qr = 0.0;
                    for i in 0..d {
                        for j in 0..d {
                            qb += bt.get(i, j, al, be) * xi[i * d + j];
                            qr += rt.get(i, j, al, be) * xi[i * d + j];
                        }
                    }
                    assert!((qb - qr).abs() < 1e-13 * (1.0 + qb.abs()));
                }
            }
        }
    }

    #[test]
    fn random_admissible_elasticity_reduces_to_elliptic_field() {
        // Gram-built tensor from symmetric matrices satisfies all elasticity
        // symmetries; the reduction must then be strongly elliptic.
        let d = 3;
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut t = Tensor4::zeros(d);
        for _ in 0..6 {
            let mut s = vec![0.0; d * d];
            for i in 0..d {
                for j in i..d {
                    let v: f64 = rng.gen::<f64>() - 0.5;
                    s[i * d + j] = v;
                    s[j * d + i] = v;
                }
            }
            for i in 0..d {
                for j in 0..d {
                    for a in 0..d {
                        for bb in 0..d {
                            *t.get_mut(i, j, a, bb) += s[i * d + a] * s[j * d + bb] / 6.0;
                        }
                    }
                }
            }
        }
        // Add an isotropic floor so the form is definite on symmetric xi.
        let iso = ElasticityTensor::isotropic(d, 0.3, 0.0);
        let mut base = Tensor4::zeros(d);
        iso.eval_tensor(&[0.0; 3], &mut base);
        t.add(&base);
        let b = ElasticityTensor::from_tensor(t, 0.3);
        let reduced = elasticity_reduce(&b).unwrap();
        let (lo, _) = check_ellipticity(&reduced, 100).unwrap();
        assert!(lo > 0.0);
    }

    #[test]
    fn family_spec_json_round_trip() {
        let fam = FamilySpec::Trig {
            rho: 0.5,
            terms: vec![TrigTerm {
                amp: 1.0,
                freq: vec![1, 1],
            }],
        };
        let s = serde_json::to_string(&fam).unwrap();
        let back: FamilySpec = serde_json::from_str(&s).unwrap();
        assert_eq!(fam, back);
        let parsed: FamilySpec =
            serde_json::from_str(r#"{"name":"trig","rho":0.25}"#).unwrap();
        assert!(matches!(parsed, FamilySpec::Trig { .. }));
    }
}
