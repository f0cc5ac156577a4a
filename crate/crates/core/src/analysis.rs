//! Error norms, corrector decay measurements, convergence sweeps and rate
//! fitting.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::{assemble_load, solve_reference, FeFunction};
use crate::mesh::{build_hierarchy, directional_patch_region, MeshHierarchy, TriMesh, GEOM_TOL};
use crate::multiscale::{nodal_interpolation, prolongate, CorrectorProblem, Ell};
use crate::solvers::{solve_vms_with, MethodConfig};

/// Integration region: the whole square or a closed axis-aligned box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Region {
    Full,
    Box { x0: f64, x1: f64, y0: f64, y1: f64 },
}

impl Region {
    /// `[0, a]²`.
    pub fn lower_left(a: f64) -> Self {
        Region::Box { x0: 0.0, x1: a, y0: 0.0, y1: a }
    }

    fn contains(&self, p: [f64; 2]) -> bool {
        match *self {
            Region::Full => true,
            Region::Box { x0, x1, y0, y1 } => {
                p[0] >= x0 - GEOM_TOL && p[0] <= x1 + GEOM_TOL && p[1] >= y0 - GEOM_TOL && p[1] <= y1 + GEOM_TOL
            }
        }
    }
}

/// Elements lying entirely inside the closed region.
pub fn select_elements(mesh: &TriMesh, region: Region) -> Vec<usize> {
    (0..mesh.num_triangles())
        .filter(|&t| mesh.vertices(t).iter().all(|&p| region.contains(p)))
        .collect()
}

fn selection(v: &FeFunction, region: Region) -> Vec<usize> {
    let elems = select_elements(&v.mesh, region);
    if elems.is_empty() {
        log::warn!("no element lies inside {region:?}; the norm is zero");
    }
    elems
}

fn h1_on(mesh: &TriMesh, coeffs: &[f64], elems: impl IntoIterator<Item = usize>) -> f64 {
    let mut sum = 0.0;
    for t in elems {
        let g = mesh.basis_gradients(t);
        let tri = mesh.triangles[t];
        let mut grad = [0.0; 2];
        for k in 0..3 {
            grad[0] += coeffs[tri[k]] * g[k][0];
            grad[1] += coeffs[tri[k]] * g[k][1];
        }
        sum += mesh.area(t) * (grad[0] * grad[0] + grad[1] * grad[1]);
    }
    sum.sqrt()
}

/// `|v|_{H¹}` over the elements inside `region`.
pub fn h1_seminorm(v: &FeFunction, region: Region) -> f64 {
    h1_on(&v.mesh, &v.coeffs, selection(v, region))
}

/// `‖v‖_{L²}` over the elements inside `region`, integrated exactly.
pub fn l2_norm(v: &FeFunction, region: Region) -> f64 {
    let mesh = &v.mesh;
    let mut sum = 0.0;
    for t in selection(v, region) {
        let tri = mesh.triangles[t];
        let c = tri.map(|i| v.coeffs[i]);
        let sq = c[0] * c[0] + c[1] * c[1] + c[2] * c[2];
        let s = c[0] + c[1] + c[2];
        // uᵀ M u with M = |T|/12 (1 + I)
        sum += mesh.area(t) / 12.0 * (sq + s * s);
    }
    sum.max(0.0).sqrt()
}

/// `|C_T v|_{H¹(Ω∖S_{T,ℓ,b})}` for `ℓ = 1..=ell_max`, with the global element
/// corrector computed once. Fine elements count as outside `S` when their
/// barycenter does.
pub fn decay_profile(prob: &CorrectorProblem, t: usize, v: &FeFunction, ell_max: u32) -> Result<Vec<(u32, f64)>> {
    let h = prob.hierarchy;
    let global = prob.patch(t, Ell::Global);
    let corrector = prob.element_corrector(t, v, &global)?;
    let mid = h.coarse.barycenter(t);
    let fine = &h.fine;
    Ok((1..=ell_max)
        .map(|ell| {
            let region = directional_patch_region(mid, ell, prob.b, h.coarse.mesh_size(), prob.epsilon);
            let outside = (0..fine.num_triangles()).filter(|&e| !region.contains(fine.barycenter(e)));
            (ell, h1_on(fine, &corrector.coeffs, outside))
        })
        .collect())
}

/// Coarse function with value one at every interior coarse node.
pub fn interior_hat_sum(h: &MeshHierarchy) -> FeFunction {
    let coeffs = h.coarse.boundary_node.iter().map(|&b| if b { 0.0 } else { 1.0 }).collect();
    FeFunction::new(h.coarse.clone(), coeffs)
}

/// `|C v − C_ℓ v|_{H¹(Ω)}` for each requested level, sharing one global
/// corrector computation.
pub fn localization_errors(prob: &CorrectorProblem, v: &FeFunction, ells: &[Ell]) -> Result<Vec<f64>> {
    let global = prob.correction(v, Ell::Global)?;
    ells.iter()
        .map(|&ell| {
            let local = prob.correction(v, ell)?;
            Ok(h1_seminorm(&global.sub(&local), Region::Full))
        })
        .collect()
}

pub fn localization_error(prob: &CorrectorProblem, v: &FeFunction, ell: Ell) -> Result<f64> {
    Ok(localization_errors(prob, v, &[ell])?[0])
}

/// Errors of one multiscale run against the fine reference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    #[serde(rename = "H")]
    pub h: f64,
    pub coarse_n: usize,
    pub ell: Ell,
    /// `|u_h − P u_{H,ℓ}|_{H¹}` on `[0, 0.75]²`.
    pub h1_local: f64,
    /// `‖u_h − P u_{H,ℓ}‖_{L²(Ω)}`.
    pub l2_global: f64,
    /// `‖u_h − P I_H u_h‖_{L²(Ω)}`.
    pub l2_interp: f64,
    /// Seconds spent on the correctors and the coarse solve.
    pub runtime: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConvergenceStudy {
    pub reports: Vec<ErrorReport>,
    /// Runs that failed, with the reason.
    pub failures: Vec<(usize, Ell, String)>,
}

/// Box on which the local H¹ error is measured, away from the outflow layers.
pub const LOCAL_BOX: f64 = 0.75;

impl ConvergenceStudy {
    fn series(&self, ell: Ell, field: impl Fn(&ErrorReport) -> f64) -> (Vec<f64>, Vec<f64>) {
        self.reports.iter().filter(|r| r.ell == ell).map(|r| (r.h, field(r))).unzip()
    }

    /// Least-squares rate of `h1_local` against `H` at level `ell`.
    pub fn h1_slope(&self, ell: Ell) -> f64 {
        let (h, e) = self.series(ell, |r| r.h1_local);
        fit_slope(&h, &e)
    }

    /// Rate of `l2_global` over the `last` smallest mesh sizes.
    pub fn l2_slope(&self, ell: Ell, last: usize) -> f64 {
        let (mut h, mut e) = self.series(ell, |r| r.l2_global);
        let mut pairs: Vec<(f64, f64)> = h.drain(..).zip(e.drain(..)).collect();
        pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
        let tail = &pairs[pairs.len().saturating_sub(last)..];
        let (h, e): (Vec<f64>, Vec<f64>) = tail.iter().copied().unzip();
        fit_slope(&h, &e)
    }

    pub fn report(&self, coarse_n: usize, ell: Ell) -> Option<&ErrorReport> {
        self.reports.iter().find(|r| r.coarse_n == coarse_n && r.ell == ell)
    }
}

/// Reference solve once on the template's fine mesh, then one multiscale
/// solve per `(coarse_n, ell)`, in that order.
pub fn convergence_study(template: &MethodConfig, coarse_ns: &[usize], ells: &[Ell]) -> Result<ConvergenceStudy> {
    template.validate()?;
    let fine_n = template.fine_n;
    let b = template.b();
    let mut reports = Vec::new();
    let mut failures = Vec::new();
    let mut reference: Option<FeFunction> = None;
    for &coarse_n in coarse_ns {
        let cfg = MethodConfig { coarse_n, ..template.clone() };
        if let Err(e) = cfg.validate() {
            for &ell in ells {
                failures.push((coarse_n, ell, e.to_string()));
            }
            continue;
        }
        let h = build_hierarchy(coarse_n, fine_n)?;
        let uh = match &reference {
            Some(u) => FeFunction::new(h.fine.clone(), u.coeffs.clone()),
            None => {
                let u = solve_reference(&h, cfg.epsilon, b, |p| cfg.f.eval(p), cfg.solver_tol)?;
                reference = Some(u.clone());
                u
            }
        };
        let interp = prolongate(&h, &nodal_interpolation(&h, &uh));
        let l2_interp = l2_norm(&uh.sub(&interp), Region::Full);
        let prob = CorrectorProblem::new(&h, cfg.epsilon, b)?;
        let load = assemble_load(&h.fine, |p| cfg.f.eval(p));
        for &ell in ells {
            let start = Instant::now();
            match solve_vms_with(&prob, &load, ell, cfg.solver_tol) {
                Ok(sol) => {
                    let runtime = start.elapsed().as_secs_f64();
                    let err = uh.sub(&prolongate(&h, &sol.u));
                    let report = ErrorReport {
                        h: h.coarse_size(),
                        coarse_n,
                        ell,
                        h1_local: h1_seminorm(&err, Region::lower_left(LOCAL_BOX)),
                        l2_global: l2_norm(&err, Region::Full),
                        l2_interp,
                        runtime,
                    };
                    log::info!(
                        "coarse_n={coarse_n} ell={ell}: h1_local={:.3e} l2={:.3e} ({runtime:.1}s)",
                        report.h1_local,
                        report.l2_global
                    );
                    reports.push(report);
                }
                Err(e) => {
                    log::warn!("coarse_n={coarse_n} ell={ell} failed: {e}");
                    failures.push((coarse_n, ell, e.to_string()));
                }
            }
        }
    }
    Ok(ConvergenceStudy { reports, failures })
}

/// Least-squares slope of `log e` against `log h`.
pub fn fit_slope(h: &[f64], e: &[f64]) -> f64 {
    assert_eq!(h.len(), e.len());
    let n = h.len() as f64;
    if h.len() < 2 {
        return f64::NAN;
    }
    let x: Vec<f64> = h.iter().map(|v| v.ln()).collect();
    let y: Vec<f64> = e.iter().map(|v| v.ln()).collect();
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

/// Nodal values along the grid row at height `y`, by ascending `x`.
pub fn line_cut(v: &FeFunction, y: f64) -> Result<Vec<(f64, f64)>> {
    let mesh = &v.mesh;
    let n = mesh.n as f64;
    let j = y * n;
    if !(0.0..=n).contains(&j.round()) || (j - j.round()).abs() > 1e-9 {
        let below = (j.floor().clamp(0.0, n)) / n;
        let above = (j.ceil().clamp(0.0, n)) / n;
        return Err(Error::NotGridLine { y, below, above });
    }
    let j = j.round() as usize;
    Ok((0..=mesh.n)
        .map(|i| {
            let k = mesh.node_index(i, j);
            (mesh.nodes[k][0], v.coeffs[k])
        })
        .collect())
}
