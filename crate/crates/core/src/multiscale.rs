//! Inter-grid transfer, the fine-scale kernel of nodal interpolation, and
//! the element correctors that build the multiscale test space.
//!
//! For a coarse function `v` and coarse element `T` the element corrector
//! `C_{T,ℓ} v` is the kernel function supported in the patch `Ω_{T,ℓ,b}`
//! with `a(w, C_{T,ℓ} v) = a_T(w, v)` for every kernel function `w` of the
//! patch. The unknown sits in the second slot of `a`, so with the assembled
//! convention `A[r][c] = a(φ_c, φ_r)` the patch system is `A_KKᵀ x = r`.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::fem::linsolve::RestrictedLu;
use crate::fem::{
    assemble_mass, assemble_stiffness, barycentric, local_operator, AssembledOperator, CsrMatrix,
    FeFunction,
};
use crate::mesh::{directional_patch_region, elements_intersecting, MeshHierarchy, Rect};

/// Localization level: a finite number of layers or the whole domain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Ell {
    Finite(u32),
    Global,
}

impl Ell {
    pub fn finite(self) -> Option<u32> {
        match self {
            Ell::Finite(l) => Some(l),
            Ell::Global => None,
        }
    }
}

impl fmt::Display for Ell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Ell::Finite(l) => write!(f, "{l}"),
            Ell::Global => f.write_str("inf"),
        }
    }
}

impl FromStr for Ell {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim() {
            "inf" | "infinity" | "∞" => Ok(Ell::Global),
            other => match other.parse::<u32>() {
                Ok(l) if l >= 1 => Ok(Ell::Finite(l)),
                _ => Err(format!("expected a positive integer or `inf`, got `{other}`")),
            },
        }
    }
}

impl Serialize for Ell {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Ell::Finite(l) => s.serialize_u32(*l),
            Ell::Global => s.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for Ell {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(u64),
            Text(String),
        }
        match Repr::deserialize(d)? {
            Repr::Num(n) if n >= 1 && n <= u32::MAX as u64 => Ok(Ell::Finite(n as u32)),
            Repr::Num(n) => Err(serde::de::Error::custom(format!("ell must be >= 1, got {n}"))),
            Repr::Text(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

/// Sorted sparse vector over fine node indices.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SparseVector {
    pub indices: Vec<u32>,
    pub values: Vec<f64>,
}

impl SparseVector {
    /// Nonzero entries of `values` placed at `support` (ascending).
    pub fn from_support(support: &[usize], values: &[f64]) -> Self {
        let mut out = Self::default();
        for (&i, &v) in support.iter().zip(values) {
            if v != 0.0 {
                out.indices.push(i as u32);
                out.values.push(v);
            }
        }
        out
    }

    pub fn from_dense(values: &[f64]) -> Self {
        let support: Vec<usize> = (0..values.len()).collect();
        Self::from_support(&support, values)
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.indices.iter().zip(&self.values).map(|(&i, &v)| (i as usize, v))
    }

    pub fn get(&self, i: usize) -> f64 {
        self.indices
            .binary_search(&(i as u32))
            .map(|k| self.values[k])
            .unwrap_or(0.0)
    }

    pub fn to_dense(&self, n: usize) -> Vec<f64> {
        let mut d = vec![0.0; n];
        for (i, v) in self.iter() {
            d[i] = v;
        }
        d
    }

    pub fn dot(&self, dense: &[f64]) -> f64 {
        self.iter().map(|(i, v)| v * dense[i]).sum()
    }

    /// `self + alpha * other` by a sorted merge.
    pub fn add_scaled(&self, alpha: f64, other: &Self) -> Self {
        let mut out = Self {
            indices: Vec::with_capacity(self.nnz() + other.nnz()),
            values: Vec::with_capacity(self.nnz() + other.nnz()),
        };
        let (mut a, mut b) = (0, 0);
        while a < self.nnz() || b < other.nnz() {
            let ia = self.indices.get(a).copied().unwrap_or(u32::MAX);
            let ib = other.indices.get(b).copied().unwrap_or(u32::MAX);
            let (i, v) = match ia.cmp(&ib) {
                std::cmp::Ordering::Less => {
                    a += 1;
                    (ia, self.values[a - 1])
                }
                std::cmp::Ordering::Greater => {
                    b += 1;
                    (ib, alpha * other.values[b - 1])
                }
                std::cmp::Ordering::Equal => {
                    a += 1;
                    b += 1;
                    (ia, self.values[a - 1] + alpha * other.values[b - 1])
                }
            };
            out.indices.push(i);
            out.values.push(v);
        }
        out
    }
}

/// Fine interior nodes that are not images of coarse nodes: a basis of the
/// kernel of nodal interpolation.
#[derive(Debug, Clone)]
pub struct KernelSpace {
    pub dofs: Vec<usize>,
    pub is_kernel: Vec<bool>,
}

impl KernelSpace {
    pub fn new(h: &MeshHierarchy) -> Self {
        let mut is_kernel: Vec<bool> = h.fine.boundary_node.iter().map(|&b| !b).collect();
        for &f in &h.coarse_to_fine_node {
            is_kernel[f] = false;
        }
        let dofs = (0..is_kernel.len()).filter(|&i| is_kernel[i]).collect();
        Self { dofs, is_kernel }
    }

    pub fn len(&self) -> usize {
        self.dofs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dofs.is_empty()
    }
}

/// Fine-mesh values of `P v` for a coarse function `v`.
pub fn prolongate(h: &MeshHierarchy, v: &FeFunction) -> FeFunction {
    let p = prolongation_matrix(h);
    FeFunction::new(h.fine.clone(), p.mul_vec(&v.coeffs))
}

/// Coarse function with the fine values at coarse node positions.
pub fn nodal_interpolation(h: &MeshHierarchy, v: &FeFunction) -> FeFunction {
    let coeffs = h.coarse_to_fine_node.iter().map(|&f| v.coeffs[f]).collect();
    FeFunction::new(h.coarse.clone(), coeffs)
}

/// Embedding `V_H → V_h` as a (fine nodes × coarse nodes) matrix.
pub fn prolongation_matrix(h: &MeshHierarchy) -> CsrMatrix {
    let mut triplets = Vec::with_capacity(3 * h.fine.num_nodes());
    for (i, &p) in h.fine.nodes.iter().enumerate() {
        let t = h.coarse.locate(p);
        let lam = barycentric(&h.coarse, t, p);
        for (k, &c) in h.coarse.triangles[t].iter().enumerate() {
            let w = if lam[k].abs() < 1e-13 { 0.0 } else { lam[k] };
            if w != 0.0 {
                triplets.push((i, c, w));
            }
        }
    }
    CsrMatrix::from_triplets(h.fine.num_nodes(), h.coarse.num_nodes(), &triplets)
}

/// Coarse hat function `λ_z` on the coarse mesh.
pub fn coarse_hat(h: &MeshHierarchy, z: usize) -> FeFunction {
    let mut c = vec![0.0; h.coarse.num_nodes()];
    c[z] = 1.0;
    FeFunction::new(h.coarse.clone(), c)
}

/// Patch of one coarse element at one localization level.
#[derive(Debug, Clone)]
pub struct Patch {
    pub element: usize,
    pub ell: Ell,
    /// Directional region `S_{T,ℓ,b}`; `None` for the global patch.
    pub region: Option<Rect>,
    pub coarse_elements: Vec<usize>,
    pub kernel_dofs: Vec<usize>,
}

/// Coarse elements sharing one patch (and hence one factorization).
#[derive(Debug, Clone)]
pub struct PatchGroup {
    pub patch_elements: Vec<usize>,
    pub members: Vec<usize>,
}

/// Per interior coarse node `z`, the localized corrector `C_ℓ λ_z`.
#[derive(Debug, Clone)]
pub struct CorrectorSet {
    pub ell: Ell,
    /// Interior coarse nodes, ascending; position `k` pairs with `correctors[k]`.
    pub nodes: Vec<usize>,
    pub correctors: Vec<SparseVector>,
    /// Prolongated hats `P λ_z`.
    pub hats: Vec<SparseVector>,
}

impl CorrectorSet {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Test function `w_z = P λ_z − C_ℓ λ_z`.
    pub fn test_function(&self, k: usize) -> SparseVector {
        self.hats[k].add_scaled(-1.0, &self.correctors[k])
    }
}

/// Fine operator, kernel space and patch machinery for one hierarchy and
/// one set of problem data.
pub struct CorrectorProblem<'a> {
    pub hierarchy: &'a MeshHierarchy,
    pub op: AssembledOperator,
    pub kernel: KernelSpace,
    pub epsilon: f64,
    pub b: [f64; 2],
    valence: Vec<u8>,
}

/// Right-hand sides are solved in blocks of this many columns.
const RHS_BLOCK: usize = 32;

impl<'a> CorrectorProblem<'a> {
    pub fn new(hierarchy: &'a MeshHierarchy, epsilon: f64, b: [f64; 2]) -> Result<Self> {
        let op = AssembledOperator::assemble(hierarchy.fine.clone(), epsilon, b)?;
        Ok(Self::with_operator(hierarchy, op))
    }

    pub fn with_operator(hierarchy: &'a MeshHierarchy, op: AssembledOperator) -> Self {
        Self {
            hierarchy,
            epsilon: op.epsilon,
            b: op.b,
            kernel: KernelSpace::new(hierarchy),
            valence: hierarchy.fine.node_valence(),
            op,
        }
    }

    fn patch_elements(&self, t: usize, ell: Ell) -> (Option<Rect>, Vec<usize>) {
        let coarse = &self.hierarchy.coarse;
        match ell {
            Ell::Global => (None, (0..coarse.num_triangles()).collect()),
            Ell::Finite(l) => {
                let region = directional_patch_region(
                    coarse.barycenter(t),
                    l,
                    self.b,
                    coarse.mesh_size(),
                    self.epsilon,
                );
                let elements = elements_intersecting(coarse, &region);
                (Some(region), elements)
            }
        }
    }

    /// Kernel dofs whose fine node lies in the interior of the union of the
    /// given coarse elements.
    pub fn patch_kernel_dofs(&self, coarse_elements: &[usize]) -> Vec<usize> {
        if coarse_elements.len() == self.hierarchy.coarse.num_triangles() {
            return self.kernel.dofs.clone();
        }
        let fine = &self.hierarchy.fine;
        let mut count = vec![0u8; fine.num_nodes()];
        for &t in coarse_elements {
            for &e in &self.hierarchy.coarse_elem_children[t] {
                for &v in &fine.triangles[e] {
                    count[v] += 1;
                }
            }
        }
        self.kernel
            .dofs
            .iter()
            .copied()
            .filter(|&d| count[d] == self.valence[d])
            .collect()
    }

    pub fn patch(&self, t: usize, ell: Ell) -> Patch {
        let (region, coarse_elements) = self.patch_elements(t, ell);
        let kernel_dofs = self.patch_kernel_dofs(&coarse_elements);
        Patch {
            element: t,
            ell,
            region,
            coarse_elements,
            kernel_dofs,
        }
    }

    /// Coarse elements grouped by identical patch, in order of their smallest
    /// member.
    pub fn patch_groups(&self, ell: Ell) -> Vec<PatchGroup> {
        let mut index: HashMap<Vec<usize>, usize> = HashMap::new();
        let mut groups: Vec<PatchGroup> = Vec::new();
        for t in 0..self.hierarchy.coarse.num_triangles() {
            let (_, elements) = self.patch_elements(t, ell);
            match index.get(&elements) {
                Some(&g) => groups[g].members.push(t),
                None => {
                    index.insert(elements.clone(), groups.len());
                    groups.push(PatchGroup {
                        patch_elements: elements,
                        members: vec![t],
                    });
                }
            }
        }
        groups
    }

    // without fine scales there is nothing to correct, whatever `b` is
    fn nonempty_patch_groups(&self, ell: Ell) -> Vec<PatchGroup> {
        if self.kernel.is_empty() {
            Vec::new()
        } else {
            self.patch_groups(ell)
        }
    }

    /// Accumulates `a_T(φ_i, v)` into `out[local[i]]` for patch dofs `i`,
    /// where `v` is the coarse P1 function with vertex values `vals` on `T`.
    fn add_element_rhs(&self, t: usize, vals: [f64; 3], local: &[usize], out: &mut [f64]) {
        let (coarse, fine) = (&self.hierarchy.coarse, &self.hierarchy.fine);
        for &e in &self.hierarchy.coarse_elem_children[t] {
            let tri = fine.triangles[e];
            let mut v = [0.0; 3];
            for (k, &node) in tri.iter().enumerate() {
                let lam = barycentric(coarse, t, fine.nodes[node]);
                v[k] = vals[0] * lam[0] + vals[1] * lam[1] + vals[2] * lam[2];
            }
            let a = local_operator(fine, e, self.epsilon, self.b);
            for (i, &node) in tri.iter().enumerate() {
                let li = local[node];
                if li != usize::MAX {
                    // a(φ_i, φ_j) = a[j][i]
                    out[li] += a[0][i] * v[0] + a[1][i] * v[1] + a[2][i] * v[2];
                }
            }
        }
    }

    fn local_map(&self, dofs: &[usize]) -> Vec<usize> {
        let mut local = vec![usize::MAX; self.hierarchy.fine.num_nodes()];
        for (k, &d) in dofs.iter().enumerate() {
            local[d] = k;
        }
        local
    }

    fn solve_blocks(&self, lu: &RestrictedLu, rhs: Vec<Vec<f64>>, context: &str) -> Result<Vec<Vec<f64>>> {
        let mut out = Vec::with_capacity(rhs.len());
        for block in rhs.chunks(RHS_BLOCK) {
            out.extend(lu.solve_many(block, true, context)?);
        }
        Ok(out)
    }

    /// `C_{T,ℓ} v` on the given patch, extended by zero to the fine mesh.
    pub fn element_corrector(&self, t: usize, v: &FeFunction, patch: &Patch) -> Result<FeFunction> {
        let fine_n = self.hierarchy.fine.num_nodes();
        let mut out = vec![0.0; fine_n];
        let tri = self.hierarchy.coarse.triangles[t];
        let vals = [v.coeffs[tri[0]], v.coeffs[tri[1]], v.coeffs[tri[2]]];
        if patch.kernel_dofs.is_empty() || vals.iter().all(|&x| x == 0.0) {
            return Ok(FeFunction::new(self.hierarchy.fine.clone(), out));
        }
        let local = self.local_map(&patch.kernel_dofs);
        let mut rhs = vec![0.0; patch.kernel_dofs.len()];
        self.add_element_rhs(t, vals, &local, &mut rhs);
        let lu = RestrictedLu::factor(&self.op.matrix, &patch.kernel_dofs, "element corrector")?;
        let x = lu.solve(&rhs, true, "element corrector")?;
        for (&d, xv) in patch.kernel_dofs.iter().zip(x) {
            out[d] = xv;
        }
        Ok(FeFunction::new(self.hierarchy.fine.clone(), out))
    }

    /// `C_ℓ v = Σ_T C_{T,ℓ} v` for a coarse function `v`.
    pub fn correction(&self, v: &FeFunction, ell: Ell) -> Result<FeFunction> {
        let groups = self.nonempty_patch_groups(ell);
        type Partial = Option<(Vec<usize>, Vec<f64>)>;
        let partials: Vec<Result<Partial>> = groups
            .par_iter()
            .map(|g| {
                let dofs = self.patch_kernel_dofs(&g.patch_elements);
                if dofs.is_empty() {
                    return Ok(None);
                }
                let local = self.local_map(&dofs);
                let mut rhs = vec![0.0; dofs.len()];
                for &t in &g.members {
                    let tri = self.hierarchy.coarse.triangles[t];
                    let vals = [v.coeffs[tri[0]], v.coeffs[tri[1]], v.coeffs[tri[2]]];
                    self.add_element_rhs(t, vals, &local, &mut rhs);
                }
                let lu = RestrictedLu::factor(&self.op.matrix, &dofs, "corrector")?;
                let x = lu.solve(&rhs, true, "corrector")?;
                Ok(Some((dofs, x)))
            })
            .collect();
        let mut out = vec![0.0; self.hierarchy.fine.num_nodes()];
        for p in partials {
            if let Some((dofs, x)) = p? {
                for (d, xv) in dofs.into_iter().zip(x) {
                    out[d] += xv;
                }
            }
        }
        Ok(FeFunction::new(self.hierarchy.fine.clone(), out))
    }

    /// Partial node correctors `Σ_{T ∈ group, T ∋ z} C_{T,ℓ} λ_z`.
    fn group_node_correctors(&self, g: &PatchGroup) -> Result<Vec<(usize, SparseVector)>> {
        let coarse = &self.hierarchy.coarse;
        let dofs = self.patch_kernel_dofs(&g.patch_elements);
        if dofs.is_empty() {
            return Ok(Vec::new());
        }
        let local = self.local_map(&dofs);
        let mut rhs: std::collections::BTreeMap<usize, Vec<f64>> = Default::default();
        for &t in &g.members {
            for (k, &z) in coarse.triangles[t].iter().enumerate() {
                if coarse.boundary_node[z] {
                    continue;
                }
                let mut vals = [0.0; 3];
                vals[k] = 1.0;
                let r = rhs.entry(z).or_insert_with(|| vec![0.0; dofs.len()]);
                self.add_element_rhs(t, vals, &local, r);
            }
        }
        let annotate = |e: Error| Error::Corrector {
            node: rhs.keys().next().copied().unwrap_or(usize::MAX),
            element: g.members[0],
            source: Box::new(e),
        };
        let lu = RestrictedLu::factor(&self.op.matrix, &dofs, "corrector").map_err(annotate)?;
        let nodes: Vec<usize> = rhs.keys().copied().collect();
        let columns: Vec<Vec<f64>> = rhs.values().cloned().collect();
        let solved = self.solve_blocks(&lu, columns, "corrector").map_err(annotate)?;
        Ok(nodes
            .into_iter()
            .zip(solved)
            .map(|(z, x)| (z, SparseVector::from_support(&dofs, &x)))
            .collect())
    }

    /// Localized correctors of all interior coarse hats.
    pub fn build_corrector_set(&self, ell: Ell) -> Result<CorrectorSet> {
        let h = self.hierarchy;
        let nodes = h.coarse_interior();
        let mut pos = vec![usize::MAX; h.coarse.num_nodes()];
        for (k, &z) in nodes.iter().enumerate() {
            pos[z] = k;
        }
        let mut correctors = vec![SparseVector::default(); nodes.len()];
        let groups = self.nonempty_patch_groups(ell);
        let chunk = rayon::current_num_threads().max(1);
        for block in groups.chunks(chunk) {
            let results: Vec<_> = block.par_iter().map(|g| self.group_node_correctors(g)).collect();
            for r in results {
                for (z, part) in r? {
                    let k = pos[z];
                    correctors[k] = if correctors[k].nnz() == 0 {
                        part
                    } else {
                        correctors[k].add_scaled(1.0, &part)
                    };
                }
            }
        }
        let p = prolongation_matrix(h).transpose();
        let hats = nodes
            .iter()
            .map(|&z| {
                let (cols, vals) = p.row(z);
                SparseVector::from_support(cols, vals)
            })
            .collect();
        Ok(CorrectorSet {
            ell,
            nodes,
            correctors,
            hats,
        })
    }
}

/// Lower bound for the stability constant of nodal interpolation,
/// `max_v max(H⁻¹‖v − I_H v‖_{L²}, |I_H v|_{H¹}) / |v|_{H¹}`, over a seeded
/// sample of interior fine functions.
///
/// The sample always contains a prolongated coarse function (ratio exactly
/// 1 on the second term) and a discrete logarithmic spike at a central coarse
/// node, which realizes the `log(H/h)` growth; the rest are random spikes and
/// random smooth-plus-noise functions.
pub fn estimate_interp_constant(h: &MeshHierarchy, samples: usize, seed: u64) -> f64 {
    assert!(samples >= 1, "need at least one sample");
    let fine = &h.fine;
    let k = assemble_stiffness(fine);
    let m = assemble_mass(fine);
    let p = prolongation_matrix(h);
    let big_h = h.coarse_size();
    let spacing = 1.0 / h.coarse.n as f64;
    let interior = h.coarse_interior();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let ratio = |v: &[f64]| -> f64 {
        let semi = k.bilinear(v, v).sqrt();
        if semi == 0.0 {
            return 0.0;
        }
        let coarse: Vec<f64> = h.coarse_to_fine_node.iter().map(|&f| v[f]).collect();
        let piv = p.mul_vec(&coarse);
        let diff: Vec<f64> = v.iter().zip(&piv).map(|(a, b)| a - b).collect();
        let l2 = m.bilinear(&diff, &diff).max(0.0).sqrt();
        let stab = k.bilinear(&piv, &piv).sqrt();
        (l2 / big_h).max(stab) / semi
    };
    let spike = |z: usize, inner: f64| -> Vec<f64> {
        let c = h.coarse.nodes[z];
        fine.nodes
            .iter()
            .zip(&fine.boundary_node)
            .map(|(q, &bd)| {
                if bd {
                    return 0.0;
                }
                let r = (q[0] - c[0]).hypot(q[1] - c[1]);
                if r <= inner {
                    1.0
                } else if r >= spacing {
                    0.0
                } else {
                    (spacing / r).ln() / (spacing / inner).ln()
                }
            })
            .collect()
    };

    let mut best: f64 = 0.0;
    if interior.is_empty() {
        return best;
    }
    let fine_spacing = 1.0 / fine.n as f64;
    for s in 0..samples {
        let v: Vec<f64> = match s {
            0 => {
                let c: Vec<f64> = (0..h.coarse.num_nodes())
                    .map(|i| if h.coarse.boundary_node[i] { 0.0 } else { rng.gen_range(-1.0..1.0) })
                    .collect();
                p.mul_vec(&c)
            }
            1 => {
                let mid = h.coarse.node_index(h.coarse.n / 2, h.coarse.n / 2);
                let z = if h.coarse.boundary_node[mid] { interior[0] } else { mid };
                spike(z, fine_spacing.min(spacing))
            }
            _ if s % 2 == 0 => {
                let z = interior[rng.gen_range(0..interior.len())];
                let inner = fine_spacing + rng.gen::<f64>() * (spacing / 2.0 - fine_spacing).max(0.0);
                spike(z, inner.min(spacing))
            }
            _ => {
                let c: Vec<f64> = (0..h.coarse.num_nodes())
                    .map(|i| if h.coarse.boundary_node[i] { 0.0 } else { rng.gen_range(-1.0..1.0) })
                    .collect();
                let amp: f64 = rng.gen_range(0.0..0.5);
                let mut v = p.mul_vec(&c);
                for (i, vi) in v.iter_mut().enumerate() {
                    if !fine.boundary_node[i] {
                        *vi += amp * rng.gen_range(-1.0..1.0);
                    }
                }
                v
            }
        };
        best = best.max(ratio(&v));
    }
    best
}
