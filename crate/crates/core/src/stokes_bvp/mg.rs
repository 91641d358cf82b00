//! Geometric multigrid for the constant-coefficient scalar Laplacian on one
//! velocity-component face grid. Used as the approximate velocity solve
//! inside the block preconditioner; the pressure block is handled by a
//! scaled mass approximation of the Schur complement.
//!
//! Boundary conditions match the component: Dirichlet nodes on the normal
//! axis (kept at zero), ghost reflection `u_g = -u_in` on tangential axes.

use super::mac::id3;

struct Level {
    n: [usize; 3],
    h: f64,
    fd: [usize; 3],
    r: Vec<f64>,
    e: Vec<f64>,
    tmp: Vec<f64>,
}

pub struct FaceMg {
    d: usize,
    axis: usize,
    levels: Vec<Level>,
    nu_pre: usize,
    nu_post: usize,
}

#[inline]
fn is_dirichlet(axis: usize, lvl_n: [usize; 3], idx: [usize; 3]) -> bool {
    idx[axis] == 0 || idx[axis] == lvl_n[axis]
}

/// Red-black Gauss-Seidel color sweep, 2D specialization.
fn sweep2(axis: usize, lvl: &Level, u: &mut [f64], rhs: &[f64], color: usize) {
    let n = lvl.n;
    let fd = lvl.fd;
    let h2 = lvl.h * lvl.h;
    let s0 = fd[1];
    for i0 in 0..fd[0] {
        if axis == 0 && (i0 == 0 || i0 == n[0]) {
            continue;
        }
        let (has_lo0, has_hi0, bump0) = if axis == 0 {
            (true, true, 0.0)
        } else {
            let lo = i0 > 0;
            let hi = i0 + 1 < n[0];
            (lo, hi, (!lo as i32 + !hi as i32) as f64)
        };
        let base = i0 * fd[1];
        let mut i1 = (color + i0) % 2;
        while i1 < fd[1] {
            if axis == 1 && (i1 == 0 || i1 == n[1]) {
                i1 += 2;
                continue;
            }
            let o = base + i1;
            let mut diag = 4.0 + bump0;
            let mut off = 0.0;
            if has_lo0 {
                off += u[o - s0];
            }
            if has_hi0 {
                off += u[o + s0];
            }
            if axis == 1 {
                off += u[o - 1] + u[o + 1];
            } else {
                if i1 > 0 {
                    off += u[o - 1];
                } else {
                    diag += 1.0;
                }
                if i1 + 1 < n[1] {
                    off += u[o + 1];
                } else {
                    diag += 1.0;
                }
            }
            u[o] = (rhs[o] * h2 + off) / diag;
            i1 += 2;
        }
    }
}

/// Red-black Gauss-Seidel color sweep, 3D specialization.
fn sweep3(axis: usize, lvl: &Level, u: &mut [f64], rhs: &[f64], color: usize) {
    let n = lvl.n;
    let fd = lvl.fd;
    let h2 = lvl.h * lvl.h;
    let s0 = fd[1] * fd[2];
    let s1 = fd[2];
    for i0 in 0..fd[0] {
        if axis == 0 && (i0 == 0 || i0 == n[0]) {
            continue;
        }
        let (has_lo0, has_hi0, bump0) = if axis == 0 {
            (true, true, 0.0)
        } else {
            let lo = i0 > 0;
            let hi = i0 + 1 < n[0];
            (lo, hi, (!lo as i32 + !hi as i32) as f64)
        };
        for i1 in 0..fd[1] {
            if axis == 1 && (i1 == 0 || i1 == n[1]) {
                continue;
            }
            let (has_lo1, has_hi1, bump1) = if axis == 1 {
                (true, true, 0.0)
            } else {
                let lo = i1 > 0;
                let hi = i1 + 1 < n[1];
                (lo, hi, (!lo as i32 + !hi as i32) as f64)
            };
            let base = (i0 * fd[1] + i1) * fd[2];
            let diag_row = 6.0 + bump0 + bump1;
            let mut i2 = (color + i0 + i1) % 2;
            while i2 < fd[2] {
                if axis == 2 && (i2 == 0 || i2 == n[2]) {
                    i2 += 2;
                    continue;
                }
                let o = base + i2;
                let mut diag = diag_row;
                let mut off = 0.0;
                if has_lo0 {
                    off += u[o - s0];
                }
                if has_hi0 {
                    off += u[o + s0];
                }
                if has_lo1 {
                    off += u[o - s1];
                }
                if has_hi1 {
                    off += u[o + s1];
                }
                if axis == 2 {
                    off += u[o - 1] + u[o + 1];
                } else {
                    if i2 > 0 {
                        off += u[o - 1];
                    } else {
                        diag += 1.0;
                    }
                    if i2 + 1 < n[2] {
                        off += u[o + 1];
                    } else {
                        diag += 1.0;
                    }
                }
                u[o] = (rhs[o] * h2 + off) / diag;
                i2 += 2;
            }
        }
    }
}

fn smooth(d: usize, axis: usize, lvl: &Level, u: &mut [f64], rhs: &[f64], sweeps: usize, reverse: bool) {
    let sweep = if d == 2 { sweep2 } else { sweep3 };
    for _ in 0..sweeps {
        if reverse {
            sweep(axis, lvl, u, rhs, 1);
            sweep(axis, lvl, u, rhs, 0);
        } else {
            sweep(axis, lvl, u, rhs, 0);
            sweep(axis, lvl, u, rhs, 1);
        }
    }
}

/// `out = rhs - (-Laplace) u` with the component's boundary folding.
fn residual_into(d: usize, axis: usize, lvl: &Level, u: &[f64], rhs: &[f64], out: &mut [f64]) {
    let n = lvl.n;
    let fd = lvl.fd;
    let inv_h2 = 1.0 / (lvl.h * lvl.h);
    let s = [fd[1] * fd[2], fd[2], 1usize];
    for i0 in 0..fd[0] {
        for i1 in 0..fd[1] {
            let base = (i0 * fd[1] + i1) * fd[2];
            for i2 in 0..fd[2] {
                let idx = [i0, i1, i2];
                let o = base + i2;
                if is_dirichlet(axis, n, idx) {
                    out[o] = 0.0;
                    continue;
                }
                let c = u[o];
                let mut acc = 0.0;
                for k in 0..d {
                    if k == axis {
                        acc += 2.0 * c - u[o - s[k]] - u[o + s[k]];
                    } else {
                        let low = if idx[k] == 0 { -c } else { u[o - s[k]] };
                        let high = if idx[k] + 1 == n[k] { -c } else { u[o + s[k]] };
                        acc += 2.0 * c - low - high;
                    }
                }
                out[o] = rhs[o] - acc * inv_h2;
            }
        }
    }
}

/// Per-axis transfer stencil: up to 3 (offset, weight) entries.
#[derive(Clone, Copy)]
struct Stencil {
    len: usize,
    off: [i64; 3],
    w: [f64; 3],
}

impl Stencil {
    const ONE: Stencil = Stencil {
        len: 1,
        off: [0, 0, 0],
        w: [1.0, 0.0, 0.0],
    };
}

/// Fine residual -> coarse rhs. Full weighting on the node-aligned axis,
/// two-cell averaging on tangential axes.
fn restrict(d: usize, axis: usize, fine: &Level, coarse: &Level, src: &[f64], dst: &mut [f64]) {
    let cfd = coarse.fd;
    let ffd = fine.fd;
    for i0 in 0..cfd[0] {
        for i1 in 0..cfd[1] {
            for i2 in 0..cfd[2] {
                let cidx = [i0, i1, i2];
                let o = id3(cfd, cidx);
                if is_dirichlet(axis, coarse.n, cidx) {
                    dst[o] = 0.0;
                    continue;
                }
                let mut st = [Stencil::ONE; 3];
                for (k, stk) in st.iter_mut().enumerate().take(d) {
                    let base = 2 * cidx[k] as i64;
                    *stk = if k == axis {
                        Stencil {
                            len: 3,
                            off: [base - 1, base, base + 1],
                            w: [0.25, 0.5, 0.25],
                        }
                    } else {
                        Stencil {
                            len: 2,
                            off: [base, base + 1, 0],
                            w: [0.5, 0.5, 0.0],
                        }
                    };
                }
                let mut acc = 0.0;
                for a0 in 0..st[0].len {
                    for a1 in 0..st[1].len {
                        for a2 in 0..st[2].len {
                            let fi = [st[0].off[a0], st[1].off[a1], st[2].off[a2]];
                            let w = st[0].w[a0] * st[1].w[a1] * st[2].w[a2];
                            let mut idx = [0usize; 3];
                            let mut ok = true;
                            for k in 0..3 {
                                if fi[k] < 0 || fi[k] >= ffd[k] as i64 {
                                    ok = false;
                                    break;
                                }
                                idx[k] = fi[k] as usize;
                            }
                            if ok {
                                acc += w * src[id3(ffd, idx)];
                            }
                        }
                    }
                }
                dst[o] = acc;
            }
        }
    }
}

/// Coarse correction -> fine grid (added). Linear interpolation; tangential
/// walls reflect (`ghost = -value`).
fn prolong_add(d: usize, axis: usize, coarse: &Level, fine: &Level, src: &[f64], dst: &mut [f64]) {
    let cfd = coarse.fd;
    let ffd = fine.fd;
    for i0 in 0..ffd[0] {
        for i1 in 0..ffd[1] {
            for i2 in 0..ffd[2] {
                let fidx = [i0, i1, i2];
                if is_dirichlet(axis, fine.n, fidx) {
                    continue;
                }
                let mut st = [Stencil::ONE; 3];
                for (k, stk) in st.iter_mut().enumerate().take(d) {
                    let f = fidx[k] as i64;
                    *stk = if k == axis {
                        if f % 2 == 0 {
                            Stencil {
                                len: 1,
                                off: [f / 2, 0, 0],
                                w: [1.0, 0.0, 0.0],
                            }
                        } else {
                            Stencil {
                                len: 2,
                                off: [f / 2, f / 2 + 1, 0],
                                w: [0.5, 0.5, 0.0],
                            }
                        }
                    } else if f % 2 == 0 {
                        Stencil {
                            len: 2,
                            off: [f / 2, f / 2 - 1, 0],
                            w: [0.75, 0.25, 0.0],
                        }
                    } else {
                        Stencil {
                            len: 2,
                            off: [f / 2, f / 2 + 1, 0],
                            w: [0.75, 0.25, 0.0],
                        }
                    };
                }
                let mut acc = 0.0;
                for a0 in 0..st[0].len {
                    for a1 in 0..st[1].len {
                        for a2 in 0..st[2].len {
                            let co = [st[0].off[a0], st[1].off[a1], st[2].off[a2]];
                            let mut w = st[0].w[a0] * st[1].w[a1] * st[2].w[a2];
                            let mut idx = [0usize; 3];
                            let mut ok = true;
                            for k in 0..3 {
                                if co[k] < 0 || co[k] >= cfd[k] as i64 {
                                    if k != axis && k < d {
                                        // Tangential reflection through the wall.
                                        idx[k] = co[k].clamp(0, cfd[k] as i64 - 1) as usize;
                                        w = -w;
                                    } else {
                                        ok = false;
                                        break;
                                    }
                                } else {
                                    idx[k] = co[k] as usize;
                                }
                            }
                            if ok {
                                acc += w * src[id3(cfd, idx)];
                            }
                        }
                    }
                }
                dst[id3(ffd, fidx)] += acc;
            }
        }
    }
}

impl FaceMg {
    pub fn new(d: usize, axis: usize, n: [usize; 3], h: f64) -> Self {
        let mut levels = Vec::new();
        let mut nn = [1usize; 3];
        for k in 0..3 {
            nn[k] = if k < d { n[k] } else { 1 };
        }
        let mut hh = h;
        loop {
            let mut fd = nn;
            fd[axis] += 1;
            let total = fd[0] * fd[1] * fd[2];
            levels.push(Level {
                n: nn,
                h: hh,
                fd,
                r: vec![0.0; total],
                e: vec![0.0; total],
                tmp: vec![0.0; total],
            });
            let can_coarsen = (0..d).all(|k| nn[k] % 2 == 0 && nn[k] >= 8);
            if !can_coarsen {
                break;
            }
            for k in 0..d {
                nn[k] /= 2;
            }
            hh *= 2.0;
        }
        FaceMg {
            d,
            axis,
            levels,
            nu_pre: 1,
            nu_post: 1,
        }
    }

    fn vcycle(&mut self, li: usize) {
        let nlevels = self.levels.len();
        let d = self.d;
        let axis = self.axis;
        if li + 1 == nlevels {
            let lvl = &mut self.levels[li];
            for v in lvl.e.iter_mut() {
                *v = 0.0;
            }
            let geo = Level {
                n: lvl.n,
                h: lvl.h,
                fd: lvl.fd,
                r: Vec::new(),
                e: Vec::new(),
                tmp: Vec::new(),
            };
            let (e, r) = (&mut lvl.e, &lvl.r);
            smooth(d, axis, &geo, e, r, 30, false);
            return;
        }
        {
            let (fine_part, coarse_part) = self.levels.split_at_mut(li + 1);
            let fine = &mut fine_part[li];
            let coarse = &mut coarse_part[0];
            for v in fine.e.iter_mut() {
                *v = 0.0;
            }
            let geo = Level {
                n: fine.n,
                h: fine.h,
                fd: fine.fd,
                r: Vec::new(),
                e: Vec::new(),
                tmp: Vec::new(),
            };
            smooth(d, axis, &geo, &mut fine.e, &fine.r, self.nu_pre, false);
            residual_into(d, axis, &geo, &fine.e, &fine.r, &mut fine.tmp);
            let mut cr = std::mem::take(&mut coarse.r);
            restrict(d, axis, &geo, coarse, &fine.tmp, &mut cr);
            coarse.r = cr;
        }
        self.vcycle(li + 1);
        {
            let (fine_part, coarse_part) = self.levels.split_at_mut(li + 1);
            let fine = &mut fine_part[li];
            let coarse = &coarse_part[0];
            let geo = Level {
                n: fine.n,
                h: fine.h,
                fd: fine.fd,
                r: Vec::new(),
                e: Vec::new(),
                tmp: Vec::new(),
            };
            prolong_add(d, axis, coarse, &geo, &coarse.e, &mut fine.e);
            smooth(d, axis, &geo, &mut fine.e, &fine.r, self.nu_post, true);
        }
    }

    /// One V-cycle approximation of `(-Laplace)^{-1} r`.
    pub fn solve_approx(&mut self, r: &[f64], out: &mut [f64]) {
        self.levels[0].r.copy_from_slice(r);
        self.vcycle(0);
        out.copy_from_slice(&self.levels[0].e);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_cycles(d: usize, axis: usize, n: [usize; 3], cycles: usize) -> (f64, f64) {
        let h = 1.0 / n[0] as f64;
        let mut mg = FaceMg::new(d, axis, n, h);
        let fd = mg.levels[0].fd;
        let total = fd[0] * fd[1] * fd[2];
        let mut b = vec![0.0; total];
        for i0 in 0..fd[0] {
            for i1 in 0..fd[1] {
                for i2 in 0..fd[2] {
                    let idx = [i0, i1, i2];
                    if !is_dirichlet(axis, mg.levels[0].n, idx) {
                        b[id3(fd, idx)] = (((i0 * 7 + i1 * 3 + i2) % 11) as f64) - 5.0;
                    }
                }
            }
        }
        let geo = Level {
            n: mg.levels[0].n,
            h,
            fd,
            r: Vec::new(),
            e: Vec::new(),
            tmp: Vec::new(),
        };
        let mut x = vec![0.0; total];
        let mut res = b.clone();
        let mut corr = vec![0.0; total];
        let norm0: f64 = res.iter().map(|v| v * v).sum::<f64>().sqrt();
        for _ in 0..cycles {
            mg.solve_approx(&res, &mut corr);
            for (xx, c) in x.iter_mut().zip(corr.iter()) {
                *xx += c;
            }
            let mut tmp = vec![0.0; total];
            residual_into(d, axis, &geo, &x, &b, &mut tmp);
            res = tmp;
        }
        let norm: f64 = res.iter().map(|v| v * v).sum::<f64>().sqrt();
        (norm0, norm)
    }

    #[test]
    fn vcycle_contracts_poisson_residual_2d() {
        let (n0, n) = run_cycles(2, 0, [32, 32, 1], 10);
        assert!(n < 1e-6 * n0, "relative residual {}", n / n0);
    }

    #[test]
    fn vcycle_contracts_poisson_residual_3d() {
        let (n0, n) = run_cycles(3, 1, [16, 16, 16], 10);
        assert!(n < 1e-6 * n0, "relative residual {}", n / n0);
    }

    #[test]
    fn vcycle_handles_non_power_of_two_even_sizes() {
        let (n0, n) = run_cycles(2, 1, [48, 48, 1], 12);
        assert!(n < 1e-5 * n0, "relative residual {}", n / n0);
    }
}
