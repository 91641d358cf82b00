//! Dense rank-4 coefficient tensors `a_ij^{ab}` for dimensions 2 and 3.
//!
//! The index convention follows the operator `-d_i ( a_ij^{ab} d_j u^b )`:
//! `i` is the flux direction, `j` the derivative direction, `a` the equation
//! component and `b` the velocity component. Entries are stored flat in
//! `((i*d + j)*d + a)*d + b` order.

use serde::{Deserialize, Serialize};

/// A constant rank-4 tensor with `d^4` entries.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor4 {
    d: usize,
    data: Vec<f64>,
}

impl Tensor4 {
    pub fn zeros(d: usize) -> Self {
        assert!(d == 2 || d == 3, "dimension must be 2 or 3");
        Tensor4 {
            d,
            data: vec![0.0; d * d * d * d],
        }
    }

    /// The identity tensor `delta_ij delta_ab`, i.e. the scalar Laplacian
    /// acting on each velocity component.
    pub fn identity(d: usize) -> Self {
        Self::scaled_identity(d, 1.0)
    }

    pub fn scaled_identity(d: usize, c: f64) -> Self {
        let mut t = Self::zeros(d);
        for i in 0..d {
            for a in 0..d {
                *t.get_mut(i, i, a, a) = c;
            }
        }
        t
    }

    pub fn from_fn(d: usize, f: impl Fn(usize, usize, usize, usize) -> f64) -> Self {
        let mut t = Self::zeros(d);
        for i in 0..d {
            for j in 0..d {
                for a in 0..d {
                    for b in 0..d {
                        *t.get_mut(i, j, a, b) = f(i, j, a, b);
                    }
                }
            }
        }
        t
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.d
    }

    #[inline]
    fn idx(&self, i: usize, j: usize, a: usize, b: usize) -> usize {
        ((i * self.d + j) * self.d + a) * self.d + b
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, a: usize, b: usize) -> f64 {
        self.data[self.idx(i, j, a, b)]
    }

    #[inline]
    pub fn get_mut(&mut self, i: usize, j: usize, a: usize, b: usize) -> &mut f64 {
        let k = self.idx(i, j, a, b);
        &mut self.data[k]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn from_flat(d: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), d * d * d * d);
        Tensor4 { d, data }
    }

    /// Quadratic form `a_ij^{ab} xi_i^a xi_j^b` for a matrix `xi` given in
    /// `xi[i*d + a]` layout.
    pub fn quadratic_form(&self, xi: &[f64]) -> f64 {
        let d = self.d;
        let mut s = 0.0;
        for i in 0..d {
            for j in 0..d {
                for a in 0..d {
                    for b in 0..d {
                        s += self.get(i, j, a, b) * xi[i * d + a] * xi[j * d + b];
                    }
                }
            }
        }
        s
    }

    /// Contraction `(A xi)_i^a = a_ij^{ab} xi_j^b`.
    pub fn contract(&self, xi: &[f64], out: &mut [f64]) {
        let d = self.d;
        for i in 0..d {
            for a in 0..d {
                let mut s = 0.0;
                for j in 0..d {
                    for b in 0..d {
                        s += self.get(i, j, a, b) * xi[j * d + b];
                    }
                }
                out[i * d + a] = s;
            }
        }
    }

    /// The adjoint tensor `a*_ij^{ab} = a_ji^{ba}`, i.e. the coefficients of
    /// the adjoint operator.
    pub fn adjoint(&self) -> Tensor4 {
        let d = self.d;
        Tensor4::from_fn(d, |i, j, a, b| self.get(j, i, b, a))
    }

    /// Whether the tensor equals its adjoint (self-adjoint operator).
    pub fn is_self_adjoint(&self, tol: f64) -> bool {
        let d = self.d;
        for i in 0..d {
            for j in 0..d {
                for a in 0..d {
                    for b in 0..d {
                        if (self.get(i, j, a, b) - self.get(j, i, b, a)).abs() > tol {
                            return false;
                        }
                    }
                }
            }
        }
        true
    }

    /// The tensor as a `d^2 x d^2` matrix acting on flattened `xi` (row
    /// `i*d+a`, column `j*d+b`). The quadratic form only sees the symmetric
    /// part of this matrix.
    pub fn as_matrix(&self) -> nalgebra::DMatrix<f64> {
        let d = self.d;
        let n = d * d;
        nalgebra::DMatrix::from_fn(n, n, |r, c| {
            let (i, a) = (r / d, r % d);
            let (j, b) = (c / d, c % d);
            self.get(i, j, a, b)
        })
    }

    /// Exact extreme eigenvalues of the symmetrized quadratic-form matrix.
    pub fn eigen_bounds(&self) -> (f64, f64) {
        let m = self.as_matrix();
        let sym = (&m + m.transpose()) * 0.5;
        let eig = nalgebra::SymmetricEigen::new(sym);
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for &e in eig.eigenvalues.iter() {
            lo = lo.min(e);
            hi = hi.max(e);
        }
        (lo, hi)
    }

    /// Mean of the diagonal entries `a_ii^{aa}`; equals 1 for the identity.
    /// Used as a scalar magnitude proxy when preconditioning.
    pub fn isotropic_proxy(&self) -> f64 {
        let d = self.d;
        let mut s = 0.0;
        for i in 0..d {
            for a in 0..d {
                s += self.get(i, i, a, a);
            }
        }
        s / (d * d) as f64
    }

    pub fn scale(&mut self, c: f64) {
        for v in &mut self.data {
            *v *= c;
        }
    }

    pub fn add(&mut self, other: &Tensor4) {
        assert_eq!(self.d, other.d);
        for (v, w) in self.data.iter_mut().zip(other.data.iter()) {
            *v += *w;
        }
    }

    pub fn max_abs_diff(&self, other: &Tensor4) -> f64 {
        self.data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Kronecker delta.
#[inline]
pub fn kron(i: usize, j: usize) -> f64 {
    if i == j {
        1.0
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_quadratic_form_is_frobenius_norm() {
        for d in [2, 3] {
            let t = Tensor4::identity(d);
            let xi: Vec<f64> = (0..d * d).map(|k| (k as f64) - 1.3).collect();
            let n2: f64 = xi.iter().map(|x| x * x).sum();
            assert!((t.quadratic_form(&xi) - n2).abs() < 1e-14);
        }
    }

    #[test]
    fn eigen_bounds_of_scaled_identity() {
        let t = Tensor4::scaled_identity(3, 2.0);
        let (lo, hi) = t.eigen_bounds();
        assert!((lo - 2.0).abs() < 1e-12);
        assert!((hi - 2.0).abs() < 1e-12);
    }

    #[test]
    fn adjoint_involution() {
        let t = Tensor4::from_fn(2, |i, j, a, b| (i + 2 * j + 3 * a + 5 * b) as f64);
        let back = t.adjoint().adjoint();
        assert_eq!(t, back);
    }
}
