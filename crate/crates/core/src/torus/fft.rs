//! Multi-dimensional FFT helpers and spectral calculus on the unit torus.
//!
//! Spectra are stored as Fourier coefficients `c_k` with
//! `u(x) = sum_k c_k exp(2 pi i k.x)`: the forward transform divides by the
//! grid size, the inverse does not. Padding a spectrum to a finer grid is
//! then exact trigonometric interpolation.

use num_complex::Complex64;
use rustfft::FftPlanner;
use std::cell::RefCell;
use std::f64::consts::PI;

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

/// Grid dimensions, padded to three axes (size 1 for unused axes).
pub type Dims = [usize; 3];

pub fn dims(d: usize, n: usize) -> Dims {
    match d {
        2 => [n, n, 1],
        3 => [n, n, n],
        _ => panic!("dimension must be 2 or 3"),
    }
}

pub fn total(dims: Dims) -> usize {
    dims[0] * dims[1] * dims[2]
}

#[inline]
pub fn flat(dims: Dims, i: usize, j: usize, k: usize) -> usize {
    (i * dims[1] + j) * dims[2] + k
}

/// Integer frequency for mode index `m` on an `n`-point axis.
#[inline]
pub fn freq(m: usize, n: usize) -> i64 {
    if m <= n / 2 {
        m as i64
    } else {
        m as i64 - n as i64
    }
}

fn transform_axis(data: &mut [Complex64], dims: Dims, axis: usize, inverse: bool) {
    let n = dims[axis];
    if n <= 1 {
        return;
    }
    PLANNER.with(|planner| {
        let plan = {
            let mut p = planner.borrow_mut();
            if inverse {
                p.plan_fft_inverse(n)
            } else {
                p.plan_fft_forward(n)
            }
        };
        let mut line = vec![Complex64::new(0.0, 0.0); n];
        let (outer, stride, count_inner): (usize, usize, usize) = match axis {
            0 => (1, dims[1] * dims[2], dims[1] * dims[2]),
            1 => (dims[0], dims[2], dims[2]),
            2 => (dims[0] * dims[1], 1, 1),
            _ => unreachable!(),
        };
        if axis == 2 {
            for chunk in data.chunks_exact_mut(n) {
                plan.process(chunk);
            }
            let _ = (outer, stride, count_inner, &mut line);
        } else {
            for o in 0..outer {
                for inner in 0..count_inner {
                    let base = match axis {
                        0 => inner,
                        1 => o * dims[1] * dims[2] + inner,
                        _ => unreachable!(),
                    };
                    for m in 0..n {
                        line[m] = data[base + m * stride];
                    }
                    plan.process(&mut line);
                    for m in 0..n {
                        data[base + m * stride] = line[m];
                    }
                }
            }
        }
    });
}

/// Physical values -> Fourier coefficients (in place).
pub fn to_spectral(data: &mut [Complex64], dims: Dims) {
    for axis in 0..3 {
        transform_axis(data, dims, axis, false);
    }
    let scale = 1.0 / total(dims) as f64;
    for v in data.iter_mut() {
        *v *= scale;
    }
}

/// Fourier coefficients -> physical values (in place).
pub fn to_physical(data: &mut [Complex64], dims: Dims) {
    for axis in 0..3 {
        transform_axis(data, dims, axis, true);
    }
}

pub fn real_to_complex(src: &[f64]) -> Vec<Complex64> {
    src.iter().map(|&v| Complex64::new(v, 0.0)).collect()
}

pub fn complex_to_real(src: &[Complex64]) -> Vec<f64> {
    src.iter().map(|c| c.re).collect()
}

/// Spectrum of a real field sampled on the grid.
pub fn spectrum_of(values: &[f64], dims: Dims) -> Vec<Complex64> {
    let mut c = real_to_complex(values);
    to_spectral(&mut c, dims);
    c
}

/// Real field from a spectrum (imaginary part discarded).
pub fn field_of(spec: &[Complex64], dims: Dims) -> Vec<f64> {
    let mut c = spec.to_vec();
    to_physical(&mut c, dims);
    complex_to_real(&c)
}

/// Multiply by `i 2 pi f_axis`; the Nyquist mode is zeroed to keep real
/// fields real under differentiation.
pub fn derivative(spec: &mut [Complex64], dims: Dims, axis: usize) {
    let n = dims[axis];
    for i in 0..dims[0] {
        for j in 0..dims[1] {
            for k in 0..dims[2] {
                let m = [i, j, k][axis];
                let f = freq(m, n);
                let idx = flat(dims, i, j, k);
                if n % 2 == 0 && m == n / 2 {
                    spec[idx] = Complex64::new(0.0, 0.0);
                } else {
                    spec[idx] *= Complex64::new(0.0, 2.0 * PI * f as f64);
                }
            }
        }
    }
}

/// Apply `Delta^{-1}` (divide by `-|2 pi f|^2`), zeroing the mean mode.
pub fn inv_laplacian(spec: &mut [Complex64], dims: Dims) {
    for i in 0..dims[0] {
        for j in 0..dims[1] {
            for k in 0..dims[2] {
                let idx = flat(dims, i, j, k);
                let fs = [
                    freq(i, dims[0]) as f64,
                    freq(j, dims[1]) as f64,
                    freq(k, dims[2]) as f64,
                ];
                let k2 = (2.0 * PI).powi(2) * (fs[0] * fs[0] + fs[1] * fs[1] + fs[2] * fs[2]);
                if k2 == 0.0 {
                    spec[idx] = Complex64::new(0.0, 0.0);
                } else {
                    spec[idx] /= -k2;
                }
            }
        }
    }
}

/// Leray projection onto divergence-free fields:
/// `v -> v - f (f.v)/|f|^2` mode by mode; the mean mode is left untouched.
pub fn leray_project(comps: &mut [Vec<Complex64>], d: usize, dims: Dims) {
    for i in 0..dims[0] {
        for j in 0..dims[1] {
            for k in 0..dims[2] {
                let fs = [
                    freq(i, dims[0]) as f64,
                    freq(j, dims[1]) as f64,
                    freq(k, dims[2]) as f64,
                ];
                let f2: f64 = fs.iter().take(d).map(|f| f * f).sum();
                if f2 == 0.0 {
                    continue;
                }
                let idx = flat(dims, i, j, k);
                let mut fv = Complex64::new(0.0, 0.0);
                for (a, comp) in comps.iter().enumerate().take(d) {
                    fv += fs[a] * comp[idx];
                }
                fv /= f2;
                for (a, comp) in comps.iter_mut().enumerate().take(d) {
                    comp[idx] -= fs[a] * fv;
                }
            }
        }
    }
}

pub fn zero_mean(spec: &mut [Complex64]) {
    spec[0] = Complex64::new(0.0, 0.0);
}

/// Copy a spectrum onto a grid of different size, matching frequencies
/// (pad with zeros or truncate). Exact trigonometric interpolation for
/// upsampling of band-limited fields.
pub fn resample_spectrum(src: &[Complex64], from: Dims, to: Dims) -> Vec<Complex64> {
    let mut out = vec![Complex64::new(0.0, 0.0); total(to)];
    for i in 0..from[0] {
        let fi = freq(i, from[0]);
        let Some(ti) = freq_slot(fi, to[0]) else { continue };
        for j in 0..from[1] {
            let fj = freq(j, from[1]);
            let Some(tj) = freq_slot(fj, to[1]) else { continue };
            for k in 0..from[2] {
                let fk = freq(k, from[2]);
                let Some(tk) = freq_slot(fk, to[2]) else { continue };
                out[flat(to, ti, tj, tk)] = src[flat(from, i, j, k)];
            }
        }
    }
    out
}

/// Slot of integer frequency `f` on an `n`-point axis, if representable.
fn freq_slot(f: i64, n: usize) -> Option<usize> {
    let half = n as i64 / 2;
    if f > half || f < -(half - if n % 2 == 0 { 1 } else { 0 }) {
        // Keep +n/2 (Nyquist) representable, drop anything beyond.
        if f == half && n % 2 == 0 {
            return Some(half as usize);
        }
        return None;
    }
    Some(if f >= 0 { f as usize } else { (f + n as i64) as usize })
}

/// Discrete L2 norm of a spectrum (Parseval; equals the grid L2 norm of the
/// physical field with unit cell measure).
pub fn spectral_l2(spec: &[Complex64]) -> f64 {
    spec.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_2d() {
        let dims = dims(2, 16);
        let mut vals = vec![0.0; total(dims)];
        for i in 0..16 {
            for j in 0..16 {
                vals[flat(dims, i, j, 0)] =
                    (2.0 * PI * i as f64 / 16.0).sin() + 0.3 * (4.0 * PI * j as f64 / 16.0).cos();
            }
        }
        let spec = spectrum_of(&vals, dims);
        let back = field_of(&spec, dims);
        for (a, b) in vals.iter().zip(back.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn derivative_of_sine_is_cosine() {
        let n = 32;
        let dims = dims(2, n);
        let mut vals = vec![0.0; total(dims)];
        for i in 0..n {
            for j in 0..n {
                vals[flat(dims, i, j, 0)] = (2.0 * PI * (i as f64) / n as f64).sin();
            }
        }
        let mut spec = spectrum_of(&vals, dims);
        derivative(&mut spec, dims, 0);
        let deriv = field_of(&spec, dims);
        for i in 0..n {
            let expect = 2.0 * PI * (2.0 * PI * (i as f64) / n as f64).cos();
            assert!((deriv[flat(dims, i, 3, 0)] - expect).abs() < 1e-10);
        }
    }

    #[test]
    fn resample_is_exact_interpolation_for_bandlimited() {
        let n = 16;
        let m = 24;
        let dn = dims(2, n);
        let dm = dims(2, m);
        let f = |x: f64, y: f64| (2.0 * PI * x).cos() * (2.0 * PI * y).sin() + 0.7;
        let mut vals = vec![0.0; total(dn)];
        for i in 0..n {
            for j in 0..n {
                vals[flat(dn, i, j, 0)] = f(i as f64 / n as f64, j as f64 / n as f64);
            }
        }
        let spec = spectrum_of(&vals, dn);
        let up = resample_spectrum(&spec, dn, dm);
        let fine = field_of(&up, dm);
        for i in 0..m {
            for j in 0..m {
                let expect = f(i as f64 / m as f64, j as f64 / m as f64);
                assert!((fine[flat(dm, i, j, 0)] - expect).abs() < 1e-11);
            }
        }
    }

    #[test]
    fn leray_output_is_divergence_free() {
        let n = 16;
        let dims3 = dims(3, n);
        let mut comps: Vec<Vec<Complex64>> = (0..3)
            .map(|a| {
                let mut v = vec![0.0; total(dims3)];
                for (idx, vv) in v.iter_mut().enumerate() {
                    *vv = ((idx * (a + 2)) % 17) as f64 / 17.0 - 0.5;
                }
                spectrum_of(&v, dims3)
            })
            .collect();
        leray_project(&mut comps, 3, dims3);
        // div in spectral space: sum_a i 2 pi f_a c^a = 0 mode by mode.
        let mut max_div = 0.0f64;
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    let fs = [freq(i, n) as f64, freq(j, n) as f64, freq(k, n) as f64];
                    let idx = flat(dims3, i, j, k);
                    let mut dv = Complex64::new(0.0, 0.0);
                    for a in 0..3 {
                        dv += Complex64::new(0.0, 2.0 * PI * fs[a]) * comps[a][idx];
                    }
                    max_div = max_div.max(dv.norm());
                }
            }
        }
        assert!(max_div < 1e-12);
    }
}
