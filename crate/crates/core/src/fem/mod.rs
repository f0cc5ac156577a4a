//! P1 finite elements for `a(u,v) = ε∫∇u·∇v + ∫(b·∇u)v` on a [`TriMesh`].
//!
//! Matrices follow the convention `A[r][c] = a(φ_c, φ_r)`: the column is the
//! trial (first) slot and the row the test (second) slot, so that
//! `a(u, v) = vᵀ A u`.

pub mod linsolve;
pub mod sparse;

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::mesh::{MeshHierarchy, Point, TriMesh};
use linsolve::{restricted_residual, RestrictedLu};
pub use sparse::CsrMatrix;

/// Default relative residual tolerance of direct solves.
pub const DEFAULT_SOLVER_TOL: f64 = 1e-10;

/// Nodal coefficient vector of a P1 function on `mesh`.
#[derive(Debug, Clone)]
pub struct FeFunction {
    pub mesh: Arc<TriMesh>,
    pub coeffs: Vec<f64>,
}

impl FeFunction {
    pub fn new(mesh: Arc<TriMesh>, coeffs: Vec<f64>) -> Self {
        assert_eq!(coeffs.len(), mesh.num_nodes(), "one coefficient per node");
        Self { mesh, coeffs }
    }

    pub fn zeros(mesh: Arc<TriMesh>) -> Self {
        let n = mesh.num_nodes();
        Self::new(mesh, vec![0.0; n])
    }

    /// Nodal samples of `g`.
    pub fn interpolate(mesh: Arc<TriMesh>, g: impl Fn(Point) -> f64) -> Self {
        let coeffs = mesh.nodes.iter().map(|&p| g(p)).collect();
        Self::new(mesh, coeffs)
    }

    /// True when all boundary coefficients are exactly zero (membership in V).
    pub fn vanishes_on_boundary(&self) -> bool {
        self.mesh
            .boundary_node
            .iter()
            .zip(&self.coeffs)
            .all(|(&b, &v)| !b || v == 0.0)
    }

    pub fn max_abs(&self) -> f64 {
        self.coeffs.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Point evaluation (P1 on the containing triangle).
    pub fn eval(&self, p: Point) -> f64 {
        let t = self.mesh.locate(p);
        let lam = barycentric(&self.mesh, t, p);
        self.mesh.triangles[t]
            .iter()
            .zip(lam)
            .map(|(&v, l)| l * self.coeffs[v])
            .sum()
    }

    pub fn sub(&self, other: &Self) -> Self {
        assert!(Arc::ptr_eq(&self.mesh, &other.mesh) || *self.mesh == *other.mesh);
        let coeffs = self
            .coeffs
            .iter()
            .zip(&other.coeffs)
            .map(|(a, b)| a - b)
            .collect();
        Self::new(self.mesh.clone(), coeffs)
    }
}

/// Barycentric coordinates of `p` with respect to triangle `t`.
pub fn barycentric(mesh: &TriMesh, t: usize, p: Point) -> [f64; 3] {
    let [a, b, c] = mesh.vertices(t);
    let det = (b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]);
    let l1 = ((p[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (p[1] - a[1])) / det;
    let l2 = ((b[0] - a[0]) * (p[1] - a[1]) - (p[0] - a[0]) * (b[1] - a[1])) / det;
    [1.0 - l1 - l2, l1, l2]
}

/// `K_T[r][c] = ∫_T ∇φ_c·∇φ_r`.
pub fn local_stiffness(mesh: &TriMesh, t: usize) -> [[f64; 3]; 3] {
    let g = mesh.basis_gradients(t);
    let area = mesh.area(t);
    let mut k = [[0.0; 3]; 3];
    for r in 0..3 {
        for c in 0..3 {
            k[r][c] = area * (g[r][0] * g[c][0] + g[r][1] * g[c][1]);
        }
    }
    k
}

/// `C_T[r][c] = ∫_T (b·∇φ_c) φ_r = (b·∇φ_c)|T|/3`.
pub fn local_convection(mesh: &TriMesh, t: usize, b: [f64; 2]) -> [[f64; 3]; 3] {
    let g = mesh.basis_gradients(t);
    let third = mesh.area(t) / 3.0;
    let mut m = [[0.0; 3]; 3];
    for c in 0..3 {
        let bg = b[0] * g[c][0] + b[1] * g[c][1];
        for row in m.iter_mut() {
            row[c] = bg * third;
        }
    }
    m
}

/// Element matrix of `a_T`, same orientation as the global operator.
pub fn local_operator(mesh: &TriMesh, t: usize, epsilon: f64, b: [f64; 2]) -> [[f64; 3]; 3] {
    let k = local_stiffness(mesh, t);
    let c = local_convection(mesh, t, b);
    let mut a = [[0.0; 3]; 3];
    for r in 0..3 {
        for col in 0..3 {
            a[r][col] = epsilon * k[r][col] + c[r][col];
        }
    }
    a
}

fn assemble_with(mesh: &TriMesh, local: impl Fn(usize) -> [[f64; 3]; 3]) -> CsrMatrix {
    let mut triplets = Vec::with_capacity(9 * mesh.num_triangles());
    for (t, tri) in mesh.triangles.iter().enumerate() {
        let m = local(t);
        for r in 0..3 {
            for c in 0..3 {
                triplets.push((tri[r], tri[c], m[r][c]));
            }
        }
    }
    CsrMatrix::from_triplets(mesh.num_nodes(), mesh.num_nodes(), &triplets)
}

pub fn assemble_stiffness(mesh: &TriMesh) -> CsrMatrix {
    assemble_with(mesh, |t| local_stiffness(mesh, t))
}

pub fn assemble_convection(mesh: &TriMesh, b: [f64; 2]) -> CsrMatrix {
    assemble_with(mesh, |t| local_convection(mesh, t, b))
}

/// Consistent P1 mass matrix `M[r][c] = ∫ φ_c φ_r`.
pub fn assemble_mass(mesh: &TriMesh) -> CsrMatrix {
    assemble_with(mesh, |t| {
        let a = mesh.area(t) / 12.0;
        let mut m = [[a; 3]; 3];
        for (k, row) in m.iter_mut().enumerate() {
            row[k] = 2.0 * a;
        }
        m
    })
}

/// `∫ f φ_r` by the edge-midpoint rule on each triangle.
pub fn assemble_load(mesh: &TriMesh, f: impl Fn(Point) -> f64) -> Vec<f64> {
    let mut load = vec![0.0; mesh.num_nodes()];
    for (t, tri) in mesh.triangles.iter().enumerate() {
        let p = mesh.vertices(t);
        let w = mesh.area(t) / 3.0;
        // midpoint of edge (k, k+1) carries φ = 1/2 at both endpoints
        for k in 0..3 {
            let (i, j) = (k, (k + 1) % 3);
            let mid = [(p[i][0] + p[j][0]) / 2.0, (p[i][1] + p[j][1]) / 2.0];
            let fm = f(mid) * w * 0.5;
            load[tri[i]] += fm;
            load[tri[j]] += fm;
        }
    }
    load
}

/// The assembled form `a = εK + C` on one mesh.
#[derive(Debug, Clone)]
pub struct AssembledOperator {
    pub mesh: Arc<TriMesh>,
    pub epsilon: f64,
    pub b: [f64; 2],
    pub stiffness: CsrMatrix,
    pub convection: CsrMatrix,
    pub matrix: CsrMatrix,
}

impl AssembledOperator {
    pub fn assemble(mesh: Arc<TriMesh>, epsilon: f64, b: [f64; 2]) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(Error::InvalidConfig {
                field: "epsilon".into(),
                reason: format!("must be positive, got {epsilon}"),
            });
        }
        let stiffness = assemble_stiffness(&mesh);
        let convection = assemble_convection(&mesh, b);
        let matrix = stiffness.linear_combination(epsilon, &convection, 1.0);
        Ok(Self {
            mesh,
            epsilon,
            b,
            stiffness,
            convection,
            matrix,
        })
    }

    /// `a(u, v)` for nodal vectors `u`, `v`.
    pub fn apply(&self, u: &[f64], v: &[f64]) -> f64 {
        self.matrix.bilinear(v, u)
    }

    /// `|v|²_{H¹}`.
    pub fn seminorm_sq(&self, v: &[f64]) -> f64 {
        self.stiffness.bilinear(v, v)
    }
}

/// Solves `a(u, φ_i) = rhs_i` for all interior nodes `i` with `u = 0` on the
/// boundary.
pub fn solve_dirichlet(op: &AssembledOperator, rhs: &[f64], tol: f64) -> Result<FeFunction> {
    solve_dirichlet_matrix(&op.mesh, &op.matrix, rhs, tol)
}

/// Same as [`solve_dirichlet`] for any operator matrix on `mesh`, such as a
/// stabilized one.
pub fn solve_dirichlet_matrix(mesh: &Arc<TriMesh>, matrix: &CsrMatrix, rhs: &[f64], tol: f64) -> Result<FeFunction> {
    let interior = mesh.interior_nodes();
    let b: Vec<f64> = interior.iter().map(|&i| rhs[i]).collect();
    let mut coeffs = vec![0.0; mesh.num_nodes()];
    if interior.is_empty() {
        return Ok(FeFunction::new(mesh.clone(), coeffs));
    }
    let lu = RestrictedLu::factor(matrix, &interior, "Dirichlet problem")?;
    let mut x = lu.solve(&b, false, "Dirichlet problem")?;
    let mut residual = restricted_residual(matrix, &interior, &x, &b, false);
    if residual > tol {
        // one step of iterative refinement
        let mut full = vec![0.0; mesh.num_nodes()];
        for (&d, &v) in interior.iter().zip(&x) {
            full[d] = v;
        }
        let ax = matrix.mul_vec(&full);
        let r: Vec<f64> = interior.iter().zip(&b).map(|(&d, bi)| bi - ax[d]).collect();
        let dx = lu.solve(&r, false, "Dirichlet problem")?;
        for (xi, di) in x.iter_mut().zip(dx) {
            *xi += di;
        }
        residual = restricted_residual(matrix, &interior, &x, &b, false);
    }
    if residual > tol {
        return Err(Error::Residual {
            context: "Dirichlet problem".into(),
            residual,
            tol,
        });
    }
    for (&d, v) in interior.iter().zip(x) {
        coeffs[d] = v;
    }
    Ok(FeFunction::new(mesh.clone(), coeffs))
}

/// Mesh Péclet number `h‖b‖/ε` of a mesh of size `h`.
pub fn mesh_peclet(h: f64, b: [f64; 2], epsilon: f64) -> f64 {
    h * b[0].hypot(b[1]) / epsilon
}

/// Fine-scale Galerkin reference solution `u_h`.
pub fn solve_reference(
    h: &MeshHierarchy,
    epsilon: f64,
    b: [f64; 2],
    f: impl Fn(Point) -> f64,
    tol: f64,
) -> Result<FeFunction> {
    let pe = mesh_peclet(h.fine_size(), b, epsilon);
    if pe > 2.0 {
        log::warn!(
            "fine mesh does not resolve epsilon: h|b|/eps = {pe:.3} > 2; the reference solution may be inaccurate"
        );
    }
    let op = AssembledOperator::assemble(h.fine.clone(), epsilon, b)?;
    let load = assemble_load(&h.fine, f);
    solve_dirichlet(&op, &load, tol)
}
