//! Discrete Green's functions `(G^b(.,y), Pi^b(.,y))` on box domains and
//! approximate fundamental solutions on large boxes, with decay, symmetry,
//! and representation diagnostics.
//!
//! A column is the solution of the Dirichlet Stokes system with a discrete
//! delta in one momentum component: unit mass in one pressure cell,
//! face-averaged onto the velocity grid. Pressure columns are normalized to
//! zero mean.

use crate::snapshot::{Snapshot, SnapshotError};
use crate::stokes_bvp::{
    self, BoxDomain, BvpError, CoeffSource, PointSource, SolveOpts, StokesProblem,
    StokesSolution,
};
use std::path::PathBuf;
use std::sync::Mutex;

#[derive(Debug, thiserror::Error)]
pub enum GreenError {
    #[error("source point at distance {dist:.3e} from the boundary; need at least {min:.3e}")]
    SourceNearBoundary { dist: f64, min: f64 },
    #[error(transparent)]
    Bvp(#[from] BvpError),
    #[error(transparent)]
    Snapshot(#[from] SnapshotError),
}

/// One velocity/pressure column pair of the Green's functions.
#[derive(Clone)]
pub struct GreenColumn {
    pub solution: StokesSolution,
    pub source_cell: [usize; 3],
    pub source: [f64; 3],
    pub beta: usize,
    pub adjoint: bool,
}

/// Source-shift divided difference of a column: the discrete
/// `(d/dy_l) G(., y)` and `(d/dy_l) Pi(., y)`.
#[derive(Clone)]
pub struct GreenColumnDiff {
    /// Difference fields packaged as a solution object so the measurement
    /// helpers apply (its "velocity" is `dG/dy_l`, its "pressure"
    /// `dPi/dy_l`).
    pub fields: StokesSolution,
    pub beta: usize,
    pub ell: usize,
    pub source: [f64; 3],
}

/// Fundamental-solution approximation on a large box; pressures carry the
/// far-field constant estimate.
#[derive(Clone)]
pub struct FundamentalColumn {
    pub column: GreenColumn,
    /// Far-field pressure constant, estimated on the shell `[L/4, L/3]`.
    pub q_bar: f64,
    /// Largest radius at which measurements should be trusted (`L/8`).
    pub r_max: f64,
    /// Recorded boundary-contamination scale `(r_max/L)^{d-1}`.
    pub contamination: f64,
}

fn adjoint_source(coeff: &CoeffSource) -> CoeffSource {
    match coeff {
        CoeffSource::Oscillating { field, eps } => CoeffSource::Oscillating {
            field: std::sync::Arc::new(field.adjoint()),
            eps: *eps,
        },
        CoeffSource::Constant(t) => CoeffSource::Constant(t.adjoint()),
    }
}

/// Solve one Green's-function column. `adjoint` selects the adjoint system
/// `(G*, Pi*)` (transposed coefficient tensor).
pub fn green_column(
    coeff: &CoeffSource,
    domain: BoxDomain,
    y_cell: [usize; 3],
    beta: usize,
    tol: f64,
    adjoint: bool,
) -> Result<GreenColumn, GreenError> {
    let h = domain.h();
    let y = domain.cell_center(y_cell);
    let dist = domain.dist_to_boundary(y);
    if dist < 4.0 * h {
        return Err(GreenError::SourceNearBoundary {
            dist,
            min: 4.0 * h,
        });
    }
    let coeff = if adjoint {
        adjoint_source(coeff)
    } else {
        coeff.clone()
    };
    let problem = StokesProblem::new(domain, coeff);
    let sources = [PointSource {
        comp: beta,
        cell: y_cell,
        strength: 1.0,
    }];
    let solution = stokes_bvp::solve_stokes_with_sources(
        &problem,
        &sources,
        &SolveOpts {
            tol,
            ..SolveOpts::default()
        },
    )?;
    Ok(GreenColumn {
        solution,
        source_cell: y_cell,
        source: y,
        beta,
        adjoint,
    })
}

/// All `d` columns for one source point.
pub fn green_matrix(
    coeff: &CoeffSource,
    domain: BoxDomain,
    y_cell: [usize; 3],
    tol: f64,
    adjoint: bool,
) -> Result<Vec<GreenColumn>, GreenError> {
    (0..domain.dim())
        .map(|b| green_column(coeff, domain, y_cell, b, tol, adjoint))
        .collect()
}

/// Discrete `grad_y` of a column by source-shift divided differences.
pub fn dy_green_column(
    coeff: &CoeffSource,
    domain: BoxDomain,
    y_cell: [usize; 3],
    beta: usize,
    ell: usize,
    tol: f64,
) -> Result<GreenColumnDiff, GreenError> {
    let mut shifted = y_cell;
    shifted[ell] += 1;
    let base = green_column(coeff, domain, y_cell, beta, tol, false)?;
    let moved = green_column(coeff, domain, shifted, beta, tol, false)?;
    let h = domain.h();
    let mut fields = base.solution.clone();
    for a in 0..domain.dim() {
        for (v, (m, b)) in fields.u[a]
            .iter_mut()
            .zip(moved.solution.u[a].iter().zip(base.solution.u[a].iter()))
        {
            *v = (m - b) / h;
        }
    }
    for (v, (m, b)) in fields
        .p
        .iter_mut()
        .zip(moved.solution.p.iter().zip(base.solution.p.iter()))
    {
        *v = (m - b) / h;
    }
    Ok(GreenColumnDiff {
        fields,
        beta,
        ell,
        source: base.source,
    })
}

/// Approximate fundamental solutions: a Dirichlet solve on a large box with
/// the source at the center. The far-field pressure constant is the shell
/// average over `r in [L/4, L/3]`; measurements are restricted to
/// `r <= L/8`, with the contamination scale recorded.
pub fn fundamental_column(
    coeff: &CoeffSource,
    l: f64,
    n: usize,
    beta: usize,
    tol: f64,
) -> Result<FundamentalColumn, GreenError> {
    let d = coeff.dim();
    let domain = BoxDomain::cube(d, n, l);
    let mut center = [0usize; 3];
    for k in 0..d {
        center[k] = n / 2;
    }
    let column = green_column(coeff, domain, center, beta, tol, false)?;
    // Far-field shell average.
    let y = column.source;
    let cd = domain.cell_dims();
    let mut sum = 0.0;
    let mut count = 0usize;
    for i0 in 0..cd[0] {
        for i1 in 0..cd[1] {
            for i2 in 0..cd[2] {
                let c = [i0, i1, i2];
                let pos = domain.cell_center(c);
                let r: f64 = (0..d)
                    .map(|k| (pos[k] - y[k]).powi(2))
                    .sum::<f64>()
                    .sqrt();
                if r >= l / 4.0 && r <= l / 3.0 {
                    sum += column.solution.pressure_at(c);
                    count += 1;
                }
            }
        }
    }
    let q_bar = if count > 0 { sum / count as f64 } else { 0.0 };
    let r_max = l / 8.0;
    Ok(FundamentalColumn {
        column,
        q_bar,
        r_max,
        contamination: (r_max / l).powi(d as i32 - 1),
    })
}

/// A set of probe cells at a common separation from the source.
#[derive(Clone, Debug)]
pub struct Shell {
    pub r: f64,
    pub cells: Vec<[usize; 3]>,
    /// Probes dropped because they were too close to the source or the
    /// boundary.
    pub excluded: usize,
}

/// Build probe shells at the given radii: cells whose center distance to
/// `y` lies within `h/2` of `r`, at least `4h` from the source and from the
/// boundary.
pub fn shells(domain: &BoxDomain, y: [f64; 3], radii: &[f64]) -> Vec<Shell> {
    let d = domain.dim();
    let h = domain.h();
    let cd = domain.cell_dims();
    let mut out: Vec<Shell> = radii
        .iter()
        .map(|&r| Shell {
            r,
            cells: Vec::new(),
            excluded: 0,
        })
        .collect();
    for i0 in 0..cd[0] {
        for i1 in 0..cd[1] {
            for i2 in 0..cd[2] {
                let c = [i0, i1, i2];
                let pos = domain.cell_center(c);
                let dist: f64 = (0..d)
                    .map(|k| (pos[k] - y[k]).powi(2))
                    .sum::<f64>()
                    .sqrt();
                for shell in out.iter_mut() {
                    if (dist - shell.r).abs() <= 0.5 * h {
                        if dist < 4.0 * h || domain.dist_to_boundary(pos) < 4.0 * h {
                            shell.excluded += 1;
                        } else {
                            shell.cells.push(c);
                        }
                    }
                }
            }
        }
    }
    out
}

/// Per-shell decay measurements: mean `|G|`, mean `|grad_x G|` (Frobenius
/// over the scheme's centered gradient), and the pressure oscillation
/// (max - min) over the shell.
#[derive(Clone, Debug)]
pub struct DecaySample {
    pub r: f64,
    pub abs_g: f64,
    pub abs_dg: f64,
    pub osc_pi: f64,
    pub count: usize,
    pub excluded: usize,
}

pub fn decay_profile(column: &GreenColumn, shells: &[Shell]) -> Vec<DecaySample> {
    decay_profile_fields(&column.solution, shells)
}

/// Same measurements applied to a source-shift difference column (giving
/// `|grad_y G|`, `|grad_x grad_y G|`, and `osc grad_y Pi`).
pub fn decay_profile_diff(diff: &GreenColumnDiff, shells: &[Shell]) -> Vec<DecaySample> {
    decay_profile_fields(&diff.fields, shells)
}

fn decay_profile_fields(sol: &StokesSolution, shells: &[Shell]) -> Vec<DecaySample> {
    let d = sol.dim();
    shells
        .iter()
        .map(|shell| {
            let mut g_sum = 0.0;
            let mut dg_sum = 0.0;
            let mut pi_min = f64::INFINITY;
            let mut pi_max = f64::NEG_INFINITY;
            for &c in &shell.cells {
                let v = sol.velocity_at_center(c);
                g_sum += (0..d).map(|k| v[k] * v[k]).sum::<f64>().sqrt();
                let mut fro = 0.0;
                for b in 0..d {
                    for j in 0..d {
                        let g = sol.du_center(b, j, c);
                        fro += g * g;
                    }
                }
                dg_sum += fro.sqrt();
                let p = sol.pressure_at(c);
                pi_min = pi_min.min(p);
                pi_max = pi_max.max(p);
            }
            let n = shell.cells.len().max(1) as f64;
            DecaySample {
                r: shell.r,
                abs_g: g_sum / n,
                abs_dg: dg_sum / n,
                osc_pi: if shell.cells.is_empty() {
                    0.0
                } else {
                    pi_max - pi_min
                },
                count: shell.cells.len(),
                excluded: shell.excluded,
            }
        })
        .collect()
}

/// The free-space Stokeslet (Oseen tensor) in three dimensions:
/// `(1/8 pi)(I/r + rr/r^3)`.
pub fn stokeslet(dx: [f64; 3]) -> [[f64; 3]; 3] {
    let r2 = dx[0] * dx[0] + dx[1] * dx[1] + dx[2] * dx[2];
    let r = r2.sqrt();
    let c = 1.0 / (8.0 * std::f64::consts::PI);
    let mut out = [[0.0; 3]; 3];
    for a in 0..3 {
        for b in 0..3 {
            let delta = if a == b { 1.0 } else { 0.0 };
            out[a][b] = c * (delta / r + dx[a] * dx[b] / (r2 * r));
        }
    }
    out
}

/// The free-space pressure kernel in three dimensions:
/// `Q^b(x, y) = (x_b - y_b) / (4 pi |x-y|^3)`.
pub fn stokeslet_pressure(dx: [f64; 3]) -> [f64; 3] {
    let r2 = dx[0] * dx[0] + dx[1] * dx[1] + dx[2] * dx[2];
    let r = r2.sqrt();
    let c = 1.0 / (4.0 * std::f64::consts::PI);
    [
        c * dx[0] / (r2 * r),
        c * dx[1] / (r2 * r),
        c * dx[2] / (r2 * r),
    ]
}

/// Entry `G^{ab}(x, y)` of a solved column set (`columns[b]` sourced at a
/// common `y`), evaluated at a cell center.
pub fn green_entry(columns: &[GreenColumn], a: usize, b: usize, x_cell: [usize; 3]) -> f64 {
    columns[b].solution.velocity_at_center(x_cell)[a]
}

/// Symmetry cross-check `G*(x,y) = G(y,x)^T`: relative max error between
/// entries of columns sourced at `y` (direct system) and at `x` (adjoint
/// system), evaluated at the interchanged points.
pub fn symmetry_error(
    coeff: &CoeffSource,
    domain: BoxDomain,
    x_cell: [usize; 3],
    y_cell: [usize; 3],
    tol: f64,
) -> Result<f64, GreenError> {
    let d = domain.dim();
    let cols_y = green_matrix(coeff, domain, y_cell, tol, false)?;
    let cols_x = green_matrix(coeff, domain, x_cell, tol, true)?;
    let mut scale = 0.0f64;
    let mut err = 0.0f64;
    for a in 0..d {
        for b in 0..d {
            // G^{ab}(x,y) vs G*^{ba}(y,x).
            let direct = green_entry(&cols_y, a, b, x_cell);
            let adj = green_entry(&cols_x, b, a, y_cell);
            err = err.max((direct - adj).abs());
            scale = scale.max(direct.abs());
        }
    }
    Ok(err / scale.max(f64::MIN_POSITIVE))
}

/// Representation check for `f = g = h = 0`: quadrature of
/// `sum_y G(x, y) F(y) h_s^d` over a coarse source lattice (stride
/// `stride` cells) against a direct solve at the probe. Returns
/// `(repr_value, direct_value)` for the velocity vector at the probe.
pub fn representation_check(
    coeff: &CoeffSource,
    domain: BoxDomain,
    force: &stokes_bvp::VectorData,
    probe_cell: [usize; 3],
    stride: usize,
    tol: f64,
) -> Result<([f64; 3], [f64; 3]), GreenError> {
    let d = domain.dim();
    let h = domain.h();
    let cd = domain.cell_dims();
    let hs = h * stride as f64;
    let weight = hs.powi(d as i32);

    let mut repr = [0.0f64; 3];
    let half = stride / 2;
    let mut idx0 = half;
    while idx0 < cd[0] {
        let mut idx1 = half;
        while idx1 < cd[1] {
            let mut idx2 = if d == 3 { half } else { 0 };
            loop {
                let c = [idx0, idx1, idx2];
                let pos = domain.cell_center(c);
                let fv = force.eval(&pos);
                let mag: f64 = (0..d).map(|k| fv[k].abs()).sum();
                if mag > 0.0 {
                    for b in 0..d {
                        if fv[b] == 0.0 {
                            continue;
                        }
                        let col = green_column(coeff, domain, c, b, tol, false)?;
                        let gval = col.solution.velocity_at_center(probe_cell);
                        for (a, rv) in repr.iter_mut().enumerate().take(d) {
                            *rv += gval[a] * fv[b] * weight;
                        }
                    }
                }
                if d == 2 {
                    break;
                }
                idx2 += stride;
                if idx2 >= cd[2] {
                    break;
                }
            }
            idx1 += stride;
        }
        idx0 += stride;
    }

    let mut prob = StokesProblem::new(domain, coeff.clone());
    prob.body_force = force.clone();
    let direct = stokes_bvp::solve_stokes(&prob, tol)?;
    let dval = direct.velocity_at_center(probe_cell);
    Ok((repr, dval))
}

/// Append-only cache of solved columns keyed by problem parameters, stored
/// as snapshots: `<dir>/<key>.snap` with arrays `u0..u{d-1}`, `p`.
pub struct ColumnCache {
    dir: PathBuf,
    lock: Mutex<()>,
}

impl ColumnCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        ColumnCache {
            dir: dir.into(),
            lock: Mutex::new(()),
        }
    }

    pub fn key(
        family: &str,
        eps: Option<f64>,
        n: usize,
        y_cell: [usize; 3],
        beta: usize,
        adjoint: bool,
        tol: f64,
    ) -> String {
        let eps_part = match eps {
            Some(e) => format!("eps{e:.6e}"),
            None => "hom".to_string(),
        };
        format!(
            "fam-{family}_{eps_part}_n{n}_y{}-{}-{}_b{beta}_adj{}_tol{tol:.1e}",
            y_cell[0], y_cell[1], y_cell[2], adjoint as u8
        )
    }

    /// Solve a column through the cache.
    pub fn column(
        &self,
        family_label: &str,
        coeff: &CoeffSource,
        domain: BoxDomain,
        y_cell: [usize; 3],
        beta: usize,
        tol: f64,
        adjoint: bool,
    ) -> Result<GreenColumn, GreenError> {
        let eps = match coeff {
            CoeffSource::Oscillating { eps, .. } => Some(*eps),
            CoeffSource::Constant(_) => None,
        };
        let key = Self::key(
            family_label,
            eps,
            domain.n()[0],
            y_cell,
            beta,
            adjoint,
            tol,
        );
        let path = self.dir.join(format!("{key}.snap"));
        if path.exists() {
            let snap = Snapshot::load(&path)?;
            let d = domain.dim();
            let mut u = Vec::new();
            let mut complete = true;
            for a in 0..d {
                match snap.get(&format!("u{a}")) {
                    Some((_, data)) => u.push(data.clone()),
                    None => {
                        complete = false;
                        break;
                    }
                }
            }
            if complete {
                if let Some((_, p)) = snap.get("p") {
                    let solution = StokesSolution {
                        domain,
                        u,
                        p: p.clone(),
                        boundary: stokes_bvp::VectorData::zero(),
                        stats: Default::default(),
                    };
                    return Ok(GreenColumn {
                        solution,
                        source_cell: y_cell,
                        source: domain.cell_center(y_cell),
                        beta,
                        adjoint,
                    });
                }
            }
        }
        let col = green_column(coeff, domain, y_cell, beta, tol, adjoint)?;
        let _guard = self.lock.lock().unwrap();
        let mut snap = Snapshot::new(domain.dim(), domain.cell_dims(), domain.extent());
        for (a, ua) in col.solution.u.iter().enumerate() {
            let fd = domain.face_dims(a);
            snap.insert(
                &format!("u{a}"),
                fd.iter().map(|&x| x as u64).collect(),
                ua.clone(),
            );
        }
        snap.insert(
            "p",
            domain.cell_dims().iter().map(|&x| x as u64).collect(),
            col.solution.p.clone(),
        );
        snap.save(&path)?;
        Ok(col)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coeff::{make_coefficient, FamilySpec};
    use crate::stokes_bvp::mac::id3;
    use crate::tensor::Tensor4;
    use std::sync::Arc;

    fn trig_source(d: usize, eps: f64) -> CoeffSource {
        CoeffSource::Oscillating {
            field: Arc::new(make_coefficient(&FamilySpec::trig(0.5), d).unwrap()),
            eps,
        }
    }

    #[test]
    fn source_too_close_to_boundary_is_rejected() {
        let dom = BoxDomain::unit(2, 16);
        let coeff = CoeffSource::Constant(Tensor4::identity(2));
        match green_column(&coeff, dom, [1, 8, 0], 0, 1e-8, false) {
            Err(GreenError::SourceNearBoundary { .. }) => {}
            other => panic!("expected SourceNearBoundary, got {:?}", other.map(|_| ())),
        }
    }

    #[test]
    fn column_pressure_is_mean_zero_and_velocity_vanishes_on_boundary() {
        let dom = BoxDomain::unit(2, 16);
        let coeff = trig_source(2, 0.25);
        let col = green_column(&coeff, dom, [8, 8, 0], 0, 1e-10, false).unwrap();
        assert!(col.solution.pressure_mean_defect() <= 1e-12);
        let fd = dom.face_dims(0);
        for i1 in 0..16 {
            assert_eq!(col.solution.u[0][id3(fd, [0, i1, 0])], 0.0);
            assert_eq!(col.solution.u[0][id3(fd, [16, i1, 0])], 0.0);
        }
    }

    #[test]
    fn linearity_of_columns_in_the_source() {
        // A two-cell source equals the sum of the single-cell columns up to
        // solver tolerance.
        let dom = BoxDomain::unit(2, 16);
        let coeff = trig_source(2, 0.25);
        let tol = 1e-12;
        let c1 = green_column(&coeff, dom, [6, 8, 0], 0, tol, false).unwrap();
        let c2 = green_column(&coeff, dom, [10, 8, 0], 0, tol, false).unwrap();
        let prob = StokesProblem::new(dom, coeff);
        let both = stokes_bvp::solve_stokes_with_sources(
            &prob,
            &[
                PointSource {
                    comp: 0,
                    cell: [6, 8, 0],
                    strength: 1.0,
                },
                PointSource {
                    comp: 0,
                    cell: [10, 8, 0],
                    strength: 1.0,
                },
            ],
            &SolveOpts {
                tol,
                ..SolveOpts::default()
            },
        )
        .unwrap();
        let scale = both.linf_norm_u();
        for a in 0..2 {
            for ((x, y), z) in both.u[a]
                .iter()
                .zip(c1.solution.u[a].iter())
                .zip(c2.solution.u[a].iter())
            {
                assert!((x - (y + z)).abs() <= 1e-6 * scale);
            }
        }
    }

    #[test]
    fn discrete_symmetry_for_self_adjoint_coefficients() {
        let dom = BoxDomain::unit(2, 24);
        let coeff = trig_source(2, 0.25);
        let err = symmetry_error(&coeff, dom, [6, 12, 0], [17, 9, 0], 1e-11).unwrap();
        // The discrete saddle matrix is symmetric, so the cross-check is
        // limited only by the solver tolerance.
        assert!(err <= 1e-4, "symmetry error {err}");
    }

    #[test]
    fn shells_exclude_near_source_and_boundary() {
        let dom = BoxDomain::unit(3, 16);
        let y = dom.cell_center([8, 8, 8]);
        let sh = shells(&dom, y, &[2.0 / 16.0, 4.0 / 16.0]);
        assert!(sh[0].cells.is_empty(), "r=2h shell must be fully excluded");
        assert!(!sh[1].cells.is_empty());
        for c in &sh[1].cells {
            let pos = dom.cell_center(*c);
            assert!(dom.dist_to_boundary(pos) >= 4.0 / 16.0 - 1e-12);
        }
    }

    #[test]
    fn column_cache_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ColumnCache::new(dir.path());
        let dom = BoxDomain::unit(2, 16);
        let coeff = trig_source(2, 0.25);
        let a = cache
            .column("trig", &coeff, dom, [8, 8, 0], 0, 1e-9, false)
            .unwrap();
        let b = cache
            .column("trig", &coeff, dom, [8, 8, 0], 0, 1e-9, false)
            .unwrap();
        for (x, y) in a.solution.u[0].iter().zip(b.solution.u[0].iter()) {
            assert_eq!(x, y);
        }
        // Cached solve does not recompute (stats are defaulted).
        assert_eq!(b.solution.stats.iterations, 0);
    }
}
