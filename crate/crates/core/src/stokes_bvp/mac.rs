//! Staggered (MAC) grid layout and discrete operators: pressures at cell
//! centers, velocity component `a` on `a`-faces. The pressure gradient and
//! negative divergence are exact adjoints under the discrete inner products.
//!
//! Locations are handled in doubled coordinates where convenient: coordinate
//! `2i` is a grid plane (node), `2i + 1` a cell center, so faces, edges, and
//! centers share one representation. Tangential Dirichlet data enters through
//! ghost reflection `u_ghost = 2 f - u_in`; normal faces on the boundary hold
//! the data directly.

use crate::coeff::{CoefficientField, Structure};
use crate::krylov::KrylovVec;
use crate::tensor::Tensor4;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

/// Axis-aligned box with a uniform cubic-cell grid.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxDomain {
    d: usize,
    n: [usize; 3],
    extent: [f64; 3],
}

impl BoxDomain {
    pub fn new(d: usize, n: [usize; 3], extent: [f64; 3]) -> Result<Self, String> {
        if d != 2 && d != 3 {
            return Err(format!("dimension {d} not in {{2,3}}"));
        }
        let mut nn = [1usize; 3];
        let mut ee = [0.0f64; 3];
        let h0 = extent[0] / n[0] as f64;
        for k in 0..d {
            if n[k] < 8 {
                return Err(format!("resolution {} below minimum 8 on axis {k}", n[k]));
            }
            let h = extent[k] / n[k] as f64;
            if ((h - h0) / h0).abs() > 1e-12 {
                return Err("cells must be cubic (equal spacing on all axes)".into());
            }
            nn[k] = n[k];
            ee[k] = extent[k];
        }
        Ok(BoxDomain {
            d,
            n: nn,
            extent: ee,
        })
    }

    /// Unit box `[0,1]^d` with `n` cells per axis.
    pub fn unit(d: usize, n: usize) -> Self {
        Self::cube(d, n, 1.0)
    }

    /// Cube `[0,L]^d` with `n` cells per axis.
    pub fn cube(d: usize, n: usize, l: f64) -> Self {
        BoxDomain::new(d, [n, n, n], [l, l, l]).expect("valid cube domain")
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn n(&self) -> [usize; 3] {
        self.n
    }

    pub fn h(&self) -> f64 {
        self.extent[0] / self.n[0] as f64
    }

    pub fn extent(&self) -> [f64; 3] {
        self.extent
    }

    pub fn volume(&self) -> f64 {
        (0..self.d).map(|k| self.extent[k]).product()
    }

    pub fn cells(&self) -> usize {
        self.n[0] * self.n[1] * self.n[2]
    }

    pub fn cell_dims(&self) -> [usize; 3] {
        self.n
    }

    pub fn face_dims(&self, a: usize) -> [usize; 3] {
        let mut d = self.n;
        d[a] += 1;
        d
    }

    pub fn faces(&self, a: usize) -> usize {
        let f = self.face_dims(a);
        f[0] * f[1] * f[2]
    }

    pub fn cell_center(&self, c: [usize; 3]) -> [f64; 3] {
        let h = self.h();
        let mut p = [0.0; 3];
        for k in 0..self.d {
            p[k] = (c[k] as f64 + 0.5) * h;
        }
        p
    }

    pub fn face_pos(&self, a: usize, idx: [usize; 3]) -> [f64; 3] {
        let h = self.h();
        let mut p = [0.0; 3];
        for k in 0..self.d {
            p[k] = if k == a {
                idx[k] as f64 * h
            } else {
                (idx[k] as f64 + 0.5) * h
            };
        }
        p
    }

    /// Position from doubled coordinates.
    pub fn pos2(&self, loc2: [i64; 3]) -> [f64; 3] {
        let h = self.h();
        let mut p = [0.0; 3];
        for k in 0..self.d {
            p[k] = loc2[k] as f64 * 0.5 * h;
        }
        p
    }

    pub fn dist_to_boundary(&self, p: [f64; 3]) -> f64 {
        let mut dmin = f64::INFINITY;
        for k in 0..self.d {
            dmin = dmin.min(p[k]).min(self.extent[k] - p[k]);
        }
        dmin
    }

    /// The cell containing a point (clamped to the grid).
    pub fn cell_of(&self, p: [f64; 3]) -> [usize; 3] {
        let h = self.h();
        let mut c = [0usize; 3];
        for k in 0..self.d {
            let i = (p[k] / h).floor() as i64;
            c[k] = i.clamp(0, self.n[k] as i64 - 1) as usize;
        }
        c
    }
}

#[inline(always)]
pub fn id3(dims: [usize; 3], i: [usize; 3]) -> usize {
    (i[0] * dims[1] + i[1]) * dims[2] + i[2]
}

/// Velocity (face arrays per component, boundary faces included) plus
/// pressure (cells): the unknown vector of the saddle system.
#[derive(Clone)]
pub struct MacVec {
    pub u: Vec<Vec<f64>>,
    pub p: Vec<f64>,
}

impl MacVec {
    pub fn zeros(dom: &BoxDomain) -> Self {
        let d = dom.dim();
        MacVec {
            u: (0..d).map(|a| vec![0.0; dom.faces(a)]).collect(),
            p: vec![0.0; dom.cells()],
        }
    }
}

impl KrylovVec for MacVec {
    fn dot(&self, other: &Self) -> f64 {
        let mut s = 0.0;
        for (a, b) in self.u.iter().zip(other.u.iter()) {
            for (x, y) in a.iter().zip(b.iter()) {
                s += x * y;
            }
        }
        for (x, y) in self.p.iter().zip(other.p.iter()) {
            s += x * y;
        }
        s
    }
    fn axpy(&mut self, alpha: f64, x: &Self) {
        for (a, b) in self.u.iter_mut().zip(x.u.iter()) {
            for (y, v) in a.iter_mut().zip(b.iter()) {
                *y += alpha * v;
            }
        }
        for (y, v) in self.p.iter_mut().zip(x.p.iter()) {
            *y += alpha * v;
        }
    }
    fn scale(&mut self, alpha: f64) {
        for a in self.u.iter_mut() {
            for y in a.iter_mut() {
                *y *= alpha;
            }
        }
        for y in self.p.iter_mut() {
            *y *= alpha;
        }
    }
    fn set_zero(&mut self) {
        for a in self.u.iter_mut() {
            for y in a.iter_mut() {
                *y = 0.0;
            }
        }
        for y in self.p.iter_mut() {
            *y = 0.0;
        }
    }
}

/// Vector-valued boundary/body data, evaluated at physical positions.
#[derive(Clone)]
pub struct VectorData(pub Arc<dyn Fn(&[f64; 3], &mut [f64; 3]) + Send + Sync>);

impl VectorData {
    pub fn zero() -> Self {
        VectorData(Arc::new(|_, out| *out = [0.0; 3]))
    }
    pub fn new(f: impl Fn(&[f64; 3], &mut [f64; 3]) + Send + Sync + 'static) -> Self {
        VectorData(Arc::new(f))
    }
    pub fn eval(&self, p: &[f64; 3]) -> [f64; 3] {
        let mut out = [0.0; 3];
        (self.0)(p, &mut out);
        out
    }
}

#[derive(Clone)]
pub struct ScalarData(pub Arc<dyn Fn(&[f64; 3]) -> f64 + Send + Sync>);

impl ScalarData {
    pub fn zero() -> Self {
        ScalarData(Arc::new(|_| 0.0))
    }
    pub fn new(f: impl Fn(&[f64; 3]) -> f64 + Send + Sync + 'static) -> Self {
        ScalarData(Arc::new(f))
    }
    pub fn eval(&self, p: &[f64; 3]) -> f64 {
        (self.0)(p)
    }
}

/// Matrix-valued data `h^{ai}` (flat `a*3 + i`), entering as `div(h)`.
#[derive(Clone)]
pub struct MatrixData(pub Arc<dyn Fn(&[f64; 3], &mut [f64; 9]) + Send + Sync>);

impl MatrixData {
    pub fn new(f: impl Fn(&[f64; 3], &mut [f64; 9]) + Send + Sync + 'static) -> Self {
        MatrixData(Arc::new(f))
    }
    pub fn eval(&self, p: &[f64; 3]) -> [f64; 9] {
        let mut out = [0.0; 9];
        (self.0)(p, &mut out);
        out
    }
}

/// Ghost handling for the viscous operator and measurements.
#[derive(Clone, Copy)]
pub enum Ghost<'a> {
    /// `u_ghost = -u_in`: homogeneous tangential data (Krylov iterates).
    Homogeneous,
    /// `u_ghost = 2 f - u_in` with `f` from the boundary closure.
    Data(&'a VectorData),
}

/// Value of `u^b` at a face index where one tangential index may be -1 or
/// `n` (single ghost layer), reflected through the wall value.
pub fn uval(dom: &BoxDomain, u: &[Vec<f64>], b: usize, idx: [i64; 3], ghost: Ghost) -> f64 {
    let fd = dom.face_dims(b);
    let mut inner = [0usize; 3];
    let mut wall_axis: Option<(usize, bool)> = None;
    for k in 0..dom.dim() {
        if k == b {
            debug_assert!(idx[k] >= 0 && idx[k] <= dom.n[k] as i64);
            inner[k] = idx[k] as usize;
        } else if idx[k] < 0 {
            debug_assert!(wall_axis.is_none(), "double ghost not supported");
            wall_axis = Some((k, false));
            inner[k] = 0;
        } else if idx[k] >= dom.n[k] as i64 {
            debug_assert!(wall_axis.is_none(), "double ghost not supported");
            wall_axis = Some((k, true));
            inner[k] = dom.n[k] - 1;
        } else {
            inner[k] = idx[k] as usize;
        }
    }
    let v_in = u[b][id3(fd, inner)];
    match wall_axis {
        None => v_in,
        Some((k, upper)) => {
            let fw = match ghost {
                Ghost::Homogeneous => 0.0,
                Ghost::Data(f) => {
                    let mut pos = dom.face_pos(b, inner);
                    pos[k] = if upper { dom.extent()[k] } else { 0.0 };
                    f.eval(&pos)[b]
                }
            };
            2.0 * fw - v_in
        }
    }
}

/// Native derivative `d_j u^b` at its native location (doubled coords).
fn native_du(
    dom: &BoxDomain,
    u: &[Vec<f64>],
    b: usize,
    j: usize,
    loc2: [i64; 3],
    ghost: Ghost,
) -> f64 {
    let h = dom.h();
    if j == b {
        let mut lo = [0i64; 3];
        for k in 0..dom.dim() {
            debug_assert!(
                loc2[k].rem_euclid(2) == 1,
                "native d_b u^b sits at a cell center"
            );
            lo[k] = (loc2[k] - 1) / 2;
        }
        let mut hi = lo;
        hi[b] += 1;
        (uval(dom, u, b, hi, ghost) - uval(dom, u, b, lo, ghost)) / h
    } else {
        let mut up = [0i64; 3];
        for k in 0..dom.dim() {
            if k == b || k == j {
                debug_assert!(
                    loc2[k].rem_euclid(2) == 0,
                    "native cross derivative sits on an edge"
                );
                up[k] = loc2[k] / 2;
            } else {
                up[k] = (loc2[k] - 1) / 2;
            }
        }
        let mut lo = up;
        lo[j] -= 1;
        (uval(dom, u, b, up, ghost) - uval(dom, u, b, lo, ghost)) / h
    }
}

/// `d_j u^b` at an arbitrary doubled-coordinate location, averaging native
/// samples across parity-mismatched axes (one-sided at walls).
pub fn du_at(
    dom: &BoxDomain,
    u: &[Vec<f64>],
    b: usize,
    j: usize,
    loc2: [i64; 3],
    ghost: Ghost,
) -> f64 {
    let d = dom.dim();
    for k in 0..d {
        // d_j u^b natively sits at all-odd (center) parity when j == b and
        // at even parity in axes {b, j} (an edge) otherwise.
        let native_even = (k == b) != (k == j);
        let even = loc2[k].rem_euclid(2) == 0;
        if native_even != even {
            let mut l = loc2;
            let mut r = loc2;
            l[k] -= 1;
            r[k] += 1;
            let max2 = 2 * dom.n()[k] as i64;
            let lmin = if native_even { 0 } else { 1 };
            let rmax = if native_even { max2 } else { max2 - 1 };
            let lv = if l[k] < lmin {
                None
            } else {
                Some(du_at(dom, u, b, j, l, ghost))
            };
            let rv = if r[k] > rmax {
                None
            } else {
                Some(du_at(dom, u, b, j, r, ghost))
            };
            return match (lv, rv) {
                (Some(a), Some(c)) => 0.5 * (a + c),
                (Some(a), None) => a,
                (None, Some(c)) => c,
                (None, None) => 0.0,
            };
        }
    }
    native_du(dom, u, b, j, loc2, ghost)
}

/// Presampled coefficients at the stencil locations.
pub enum MacCoeff {
    /// Scalar modulation sampled at cell centers and at each edge grid.
    ScalarVar {
        center: Vec<f64>,
        /// Indexed by `pair_id(a,b)`; only pair (0,1) exists in 2D.
        edges: Vec<Vec<f64>>,
    },
    /// Constant tensor with nonzero rows `rows[a*d+i] = [(j, b, value)]`.
    Constant {
        tensor: Tensor4,
        rows: Vec<Vec<(usize, usize, f64)>>,
    },
    /// General variable tensor, evaluated analytically per stencil point.
    FullVar {
        field: Arc<CoefficientField>,
        inv_eps: f64,
    },
}

pub const PAIRS: [(usize, usize); 3] = [(0, 1), (0, 2), (1, 2)];

pub fn pair_id(a: usize, b: usize) -> usize {
    let (lo, hi) = if a < b { (a, b) } else { (b, a) };
    match (lo, hi) {
        (0, 1) => 0,
        (0, 2) => 1,
        (1, 2) => 2,
        _ => panic!("bad axis pair"),
    }
}

pub fn edge_dims(dom: &BoxDomain, a: usize, b: usize) -> [usize; 3] {
    let mut d = dom.cell_dims();
    d[a] += 1;
    d[b] += 1;
    d
}

fn edge_pos(dom: &BoxDomain, a: usize, b: usize, idx: [usize; 3]) -> [f64; 3] {
    let h = dom.h();
    let mut p = [0.0; 3];
    for k in 0..dom.dim() {
        p[k] = if k == a || k == b {
            idx[k] as f64 * h
        } else {
            (idx[k] as f64 + 0.5) * h
        };
    }
    p
}

/// Detects `c * identity` structure in a constant tensor.
pub fn scaled_identity_of(t: &Tensor4) -> Option<f64> {
    let c = t.get(0, 0, 0, 0);
    let d = t.dim();
    for i in 0..d {
        for j in 0..d {
            for a in 0..d {
                for b in 0..d {
                    let expect = if i == j && a == b { c } else { 0.0 };
                    if (t.get(i, j, a, b) - expect).abs() > 1e-14 * (1.0 + c.abs()) {
                        return None;
                    }
                }
            }
        }
    }
    Some(c)
}

fn build_rows(t: &Tensor4) -> Vec<Vec<(usize, usize, f64)>> {
    let d = t.dim();
    let mut rows = vec![Vec::new(); d * d];
    for a in 0..d {
        for i in 0..d {
            for j in 0..d {
                for b in 0..d {
                    let v = t.get(i, j, a, b);
                    if v != 0.0 {
                        rows[a * d + i].push((j, b, v));
                    }
                }
            }
        }
    }
    rows
}

/// Sample the coefficients of `A(x/eps)` (or a constant tensor) at the
/// stencil locations. Analytic evaluation: `eps` need not be commensurate
/// with the grid.
pub fn sample_coefficients(
    dom: &BoxDomain,
    field: &Arc<CoefficientField>,
    eps: Option<f64>,
) -> MacCoeff {
    let d = dom.dim();
    match field.structure() {
        Structure::Constant(t) => {
            if let Some(c) = scaled_identity_of(t) {
                let center = vec![c; dom.cells()];
                let npairs = if d == 2 { 1 } else { 3 };
                let mut edges = Vec::new();
                for pid in 0..npairs {
                    let (a, b) = PAIRS[pid];
                    let ed = edge_dims(dom, a, b);
                    edges.push(vec![c; ed[0] * ed[1] * ed[2]]);
                }
                MacCoeff::ScalarVar { center, edges }
            } else {
                MacCoeff::Constant {
                    rows: build_rows(t),
                    tensor: t.clone(),
                }
            }
        }
        Structure::Scalar(sc) => {
            let inv_eps = 1.0 / eps.unwrap_or(1.0);
            let cd = dom.cell_dims();
            let mut center = vec![0.0; dom.cells()];
            for i0 in 0..cd[0] {
                for i1 in 0..cd[1] {
                    for i2 in 0..cd[2] {
                        let p = dom.cell_center([i0, i1, i2]);
                        let y: Vec<f64> = (0..d).map(|k| p[k] * inv_eps).collect();
                        center[id3(cd, [i0, i1, i2])] = sc.eval(&y);
                    }
                }
            }
            let npairs = if d == 2 { 1 } else { 3 };
            let mut edges = Vec::new();
            for pid in 0..npairs {
                let (a, b) = PAIRS[pid];
                let ed = edge_dims(dom, a, b);
                let mut vals = vec![0.0; ed[0] * ed[1] * ed[2]];
                for i0 in 0..ed[0] {
                    for i1 in 0..ed[1] {
                        for i2 in 0..ed[2] {
                            let p = edge_pos(dom, a, b, [i0, i1, i2]);
                            let y: Vec<f64> = (0..d).map(|k| p[k] * inv_eps).collect();
                            vals[id3(ed, [i0, i1, i2])] = sc.eval(&y);
                        }
                    }
                }
                edges.push(vals);
            }
            MacCoeff::ScalarVar { center, edges }
        }
        Structure::Full(_) => MacCoeff::FullVar {
            field: field.clone(),
            inv_eps: 1.0 / eps.unwrap_or(1.0),
        },
    }
}

/// Discrete operator context for one problem.
pub struct MacOp {
    pub dom: BoxDomain,
    pub coeff: MacCoeff,
    pub abar: f64,
}

impl MacOp {
    /// `out^a = (L u)^a = -d_i (a_ij^{ab} d_j u^b)` on interior faces;
    /// boundary normal faces are zeroed on output but read from `u` as data.
    pub fn apply_visc(&self, u: &[Vec<f64>], ghost: Ghost, out: &mut [Vec<f64>]) {
        match &self.coeff {
            MacCoeff::ScalarVar { center, edges } => {
                out.par_iter_mut().enumerate().for_each(|(a, out_a)| {
                    self.apply_scalar_comp(a, center, edges, u, ghost, out_a);
                });
            }
            _ => {
                out.par_iter_mut().enumerate().for_each(|(a, out_a)| {
                    self.apply_general_comp(a, u, ghost, out_a);
                });
            }
        }
    }

    /// Tight loop for the scalar-viscosity case.
    fn apply_scalar_comp(
        &self,
        a: usize,
        center: &[f64],
        edges: &[Vec<f64>],
        u: &[Vec<f64>],
        ghost: Ghost,
        out_a: &mut [f64],
    ) {
        let dom = &self.dom;
        let d = dom.dim();
        let h = dom.h();
        let inv_h2 = 1.0 / (h * h);
        let fd = dom.face_dims(a);
        let cd = dom.cell_dims();
        let n = dom.n();
        let ua = &u[a];

        for v in out_a.iter_mut() {
            *v = 0.0;
        }
        for i0 in 0..fd[0] {
            for i1 in 0..fd[1] {
                for i2 in 0..fd[2] {
                    let idx = [i0, i1, i2];
                    if idx[a] == 0 || idx[a] == n[a] {
                        continue;
                    }
                    let o = id3(fd, idx);
                    let uc = ua[o];
                    let mut acc = 0.0;

                    // Normal direction: fluxes at the two adjacent cells.
                    {
                        let chi = idx; // cell with c_a = idx[a]
                        let mut clo = idx;
                        clo[a] -= 1;
                        let c_hi = center[id3(cd, chi)];
                        let c_lo = center[id3(cd, clo)];
                        let mut fhi = idx;
                        fhi[a] += 1;
                        let mut flo = idx;
                        flo[a] -= 1;
                        let dp = ua[id3(fd, fhi)] - uc;
                        let dm = uc - ua[id3(fd, flo)];
                        acc -= (c_hi * dp - c_lo * dm) * inv_h2;
                    }

                    // Tangential directions: fluxes at the two edges.
                    for t in 0..d {
                        if t == a {
                            continue;
                        }
                        let pid = pair_id(a, t);
                        let epr = PAIRS[pid];
                        let ed = edge_dims(dom, epr.0, epr.1);
                        let ce = &edges[pid];
                        // Edge indices: a-coord = idx[a] (integer), t-coord
                        // = idx[t] (low) / idx[t]+1 (high), others centered.
                        let e_lo = idx;
                        let mut e_hi = idx;
                        e_hi[t] += 1;
                        let c_hi = ce[id3(ed, e_hi)];
                        let c_lo = ce[id3(ed, e_lo)];
                        let dp = if idx[t] + 1 <= n[t] - 1 {
                            let mut fh = idx;
                            fh[t] += 1;
                            ua[id3(fd, fh)] - uc
                        } else {
                            // Wall at the high side.
                            let fw = match ghost {
                                Ghost::Homogeneous => 0.0,
                                Ghost::Data(f) => {
                                    let mut pos = dom.face_pos(a, idx);
                                    pos[t] = dom.extent()[t];
                                    f.eval(&pos)[a]
                                }
                            };
                            2.0 * fw - 2.0 * uc
                        };
                        let dm = if idx[t] >= 1 {
                            let mut fl = idx;
                            fl[t] -= 1;
                            uc - ua[id3(fd, fl)]
                        } else {
                            let fw = match ghost {
                                Ghost::Homogeneous => 0.0,
                                Ghost::Data(f) => {
                                    let mut pos = dom.face_pos(a, idx);
                                    pos[t] = 0.0;
                                    f.eval(&pos)[a]
                                }
                            };
                            2.0 * uc - 2.0 * fw
                        };
                        acc -= (c_hi * dp - c_lo * dm) * inv_h2;
                    }
                    out_a[o] = acc;
                }
            }
        }
    }

    /// General tensor path via the doubled-coordinate sampler.
    fn apply_general_comp(&self, a: usize, u: &[Vec<f64>], ghost: Ghost, out_a: &mut [f64]) {
        let dom = &self.dom;
        let d = dom.dim();
        let h = dom.h();
        let fd = dom.face_dims(a);
        let n = dom.n();
        for v in out_a.iter_mut() {
            *v = 0.0;
        }
        for i0 in 0..fd[0] {
            for i1 in 0..fd[1] {
                for i2 in 0..fd[2] {
                    let idx = [i0, i1, i2];
                    if idx[a] == 0 || idx[a] == n[a] {
                        continue;
                    }
                    let mut f2 = [0i64; 3];
                    for k in 0..d {
                        f2[k] = if k == a {
                            2 * idx[k] as i64
                        } else {
                            2 * idx[k] as i64 + 1
                        };
                    }
                    let mut acc = 0.0;
                    for i in 0..d {
                        let mut zp = f2;
                        let mut zm = f2;
                        zp[i] += 1;
                        zm[i] -= 1;
                        acc -= (self.flux_tensor_at(u, a, i, zp, ghost)
                            - self.flux_tensor_at(u, a, i, zm, ghost))
                            / h;
                    }
                    out_a[id3(fd, idx)] = acc;
                }
            }
        }
    }

    fn flux_tensor_at(
        &self,
        u: &[Vec<f64>],
        a: usize,
        i: usize,
        loc2: [i64; 3],
        ghost: Ghost,
    ) -> f64 {
        let dom = &self.dom;
        let d = dom.dim();
        match &self.coeff {
            MacCoeff::ScalarVar { .. } => unreachable!("scalar path handled separately"),
            MacCoeff::Constant { rows, .. } => {
                let mut s = 0.0;
                for &(j, b, v) in &rows[a * d + i] {
                    s += v * du_at(dom, u, b, j, loc2, ghost);
                }
                s
            }
            MacCoeff::FullVar { field, inv_eps } => {
                let pos = dom.pos2(loc2);
                let y: Vec<f64> = (0..d).map(|k| pos[k] * inv_eps).collect();
                let mut t = Tensor4::zeros(d);
                field.eval_tensor(&y, &mut t);
                let mut s = 0.0;
                for j in 0..d {
                    for b in 0..d {
                        let v = t.get(i, j, a, b);
                        if v != 0.0 {
                            s += v * du_at(dom, u, b, j, loc2, ghost);
                        }
                    }
                }
                s
            }
        }
    }

    /// Pressure gradient on interior faces (boundary faces zero).
    pub fn grad_p(&self, p: &[f64], out: &mut [Vec<f64>]) {
        let dom = &self.dom;
        let d = dom.dim();
        let h = dom.h();
        let cd = dom.cell_dims();
        for a in 0..d {
            let fd = dom.face_dims(a);
            for i0 in 0..fd[0] {
                for i1 in 0..fd[1] {
                    for i2 in 0..fd[2] {
                        let idx = [i0, i1, i2];
                        let o = id3(fd, idx);
                        if idx[a] == 0 || idx[a] == dom.n()[a] {
                            out[a][o] = 0.0;
                            continue;
                        }
                        let mut lo = idx;
                        lo[a] -= 1;
                        out[a][o] = (p[id3(cd, idx)] - p[id3(cd, lo)]) / h;
                    }
                }
            }
        }
    }

    /// Divergence at cell centers (uses boundary faces as stored).
    pub fn div_u(&self, u: &[Vec<f64>], out: &mut [f64]) {
        let dom = &self.dom;
        let d = dom.dim();
        let h = dom.h();
        let cd = dom.cell_dims();
        for v in out.iter_mut() {
            *v = 0.0;
        }
        for a in 0..d {
            let fd = dom.face_dims(a);
            for i0 in 0..cd[0] {
                for i1 in 0..cd[1] {
                    for i2 in 0..cd[2] {
                        let c = [i0, i1, i2];
                        let mut hi = c;
                        hi[a] += 1;
                        out[id3(cd, c)] += (u[a][id3(fd, hi)] - u[a][id3(fd, c)]) / h;
                    }
                }
            }
        }
    }

    /// Full saddle apply on homogeneous vectors:
    /// `r_u = L v + G q`, `r_p = -D v`.
    pub fn apply_saddle(&self, x: &MacVec, out: &mut MacVec) {
        self.apply_visc(&x.u, Ghost::Homogeneous, &mut out.u);
        let dom = &self.dom;
        let d = dom.dim();
        let h = dom.h();
        let cd = dom.cell_dims();
        for a in 0..d {
            let fd = dom.face_dims(a);
            for i0 in 0..fd[0] {
                for i1 in 0..fd[1] {
                    for i2 in 0..fd[2] {
                        let idx = [i0, i1, i2];
                        if idx[a] == 0 || idx[a] == dom.n()[a] {
                            continue;
                        }
                        let mut lo = idx;
                        lo[a] -= 1;
                        out.u[a][id3(fd, idx)] += (x.p[id3(cd, idx)] - x.p[id3(cd, lo)]) / h;
                    }
                }
            }
        }
        self.div_u(&x.u, &mut out.p);
        for v in out.p.iter_mut() {
            *v = -*v;
        }
    }
}

/// Project a cell field to zero mean.
pub fn project_mean_zero(p: &mut [f64]) {
    let mean = p.iter().sum::<f64>() / p.len() as f64;
    for v in p.iter_mut() {
        *v -= mean;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coeff::{make_coefficient, FamilySpec};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_vec(dom: &BoxDomain, seed: u64) -> MacVec {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut v = MacVec::zeros(dom);
        let d = dom.dim();
        for a in 0..d {
            let fd = dom.face_dims(a);
            for i0 in 0..fd[0] {
                for i1 in 0..fd[1] {
                    for i2 in 0..fd[2] {
                        let idx = [i0, i1, i2];
                        if idx[a] == 0 || idx[a] == dom.n()[a] {
                            continue;
                        }
                        v.u[a][id3(fd, idx)] = rng.gen::<f64>() - 0.5;
                    }
                }
            }
        }
        for p in v.p.iter_mut() {
            *p = rng.gen::<f64>() - 0.5;
        }
        v
    }

    fn dot_u(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
        a.iter()
            .zip(b.iter())
            .map(|(x, y)| x.iter().zip(y.iter()).map(|(u, v)| u * v).sum::<f64>())
            .sum()
    }

    #[test]
    fn gradient_and_negative_divergence_are_adjoint() {
        for d in [2usize, 3] {
            let dom = BoxDomain::unit(d, 8);
            let field = Arc::new(make_coefficient(&FamilySpec::constant_identity(), d).unwrap());
            let op = MacOp {
                dom,
                coeff: sample_coefficients(&dom, &field, None),
                abar: 1.0,
            };
            let x = random_vec(&dom, 11);
            let y = random_vec(&dom, 23);
            let mut gp: Vec<Vec<f64>> = (0..d).map(|a| vec![0.0; dom.faces(a)]).collect();
            op.grad_p(&x.p, &mut gp);
            let mut du = vec![0.0; dom.cells()];
            op.div_u(&y.u, &mut du);
            let lhs = dot_u(&gp, &y.u);
            let rhs: f64 = -x.p.iter().zip(du.iter()).map(|(a, b)| a * b).sum::<f64>();
            assert!(
                (lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs()),
                "adjointness defect {} in d={}",
                (lhs - rhs).abs(),
                d
            );
        }
    }

    #[test]
    fn scalar_viscous_operator_is_symmetric() {
        for d in [2usize, 3] {
            let dom = BoxDomain::unit(d, 8);
            let field = Arc::new(make_coefficient(&FamilySpec::trig(0.5), d).unwrap());
            let op = MacOp {
                dom,
                coeff: sample_coefficients(&dom, &field, Some(0.25)),
                abar: 1.0,
            };
            let x = random_vec(&dom, 3);
            let y = random_vec(&dom, 5);
            let mut kx: Vec<Vec<f64>> = (0..d).map(|a| vec![0.0; dom.faces(a)]).collect();
            let mut ky = kx.clone();
            op.apply_visc(&x.u, Ghost::Homogeneous, &mut kx);
            op.apply_visc(&y.u, Ghost::Homogeneous, &mut ky);
            let lhs = dot_u(&kx, &y.u);
            let rhs = dot_u(&x.u, &ky);
            assert!(
                (lhs - rhs).abs() <= 1e-11 * (1.0 + lhs.abs()),
                "symmetry defect {} in d={}",
                (lhs - rhs).abs(),
                d
            );
        }
    }

    #[test]
    fn identity_tensor_general_path_matches_scalar_path() {
        let d = 2;
        let dom = BoxDomain::unit(d, 8);
        let field = Arc::new(make_coefficient(&FamilySpec::constant_identity(), d).unwrap());
        let op_scalar = MacOp {
            dom,
            coeff: sample_coefficients(&dom, &field, None),
            abar: 1.0,
        };
        let t = Tensor4::identity(d);
        let op_general = MacOp {
            dom,
            coeff: MacCoeff::Constant {
                rows: super::build_rows(&t),
                tensor: t,
            },
            abar: 1.0,
        };
        let x = random_vec(&dom, 7);
        let mut o1: Vec<Vec<f64>> = (0..d).map(|a| vec![0.0; dom.faces(a)]).collect();
        let mut o2 = o1.clone();
        op_scalar.apply_visc(&x.u, Ghost::Homogeneous, &mut o1);
        op_general.apply_visc(&x.u, Ghost::Homogeneous, &mut o2);
        for (a, b) in o1.iter().zip(o2.iter()) {
            for (u, v) in a.iter().zip(b.iter()) {
                assert!((u - v).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn constant_tensor_operator_is_symmetric_in_the_interior_energy() {
        // Full constant tensor (self-adjoint): the general path should be
        // symmetric to near round-off on interior-supported fields.
        let d = 2;
        let dom = BoxDomain::unit(d, 8);
        let t = Tensor4::from_fn(d, |i, j, a, b| {
            let base = if i == j && a == b { 1.0 } else { 0.0 };
            base + 0.15 * ((i + j + a + b) % 2) as f64
        });
        // Symmetrize to a self-adjoint tensor.
        let mut ts = t.clone();
        for i in 0..d {
            for j in 0..d {
                for a in 0..d {
                    for b in 0..d {
                        *ts.get_mut(i, j, a, b) = 0.5 * (t.get(i, j, a, b) + t.get(j, i, b, a));
                    }
                }
            }
        }
        let op = MacOp {
            dom,
            coeff: MacCoeff::Constant {
                rows: super::build_rows(&ts),
                tensor: ts,
            },
            abar: 1.0,
        };
        let x = random_vec(&dom, 3);
        let y = random_vec(&dom, 9);
        let mut kx: Vec<Vec<f64>> = (0..d).map(|a| vec![0.0; dom.faces(a)]).collect();
        let mut ky = kx.clone();
        op.apply_visc(&x.u, Ghost::Homogeneous, &mut kx);
        op.apply_visc(&y.u, Ghost::Homogeneous, &mut ky);
        let lhs = dot_u(&kx, &y.u);
        let rhs = dot_u(&x.u, &ky);
        // Cross-derivative averaging at walls is one-sided, so allow a small
        // defect rather than round-off.
        assert!(
            (lhs - rhs).abs() <= 1e-6 * (1.0 + lhs.abs()),
            "symmetry defect {}",
            (lhs - rhs).abs()
        );
    }
}
