//! Structured triangulations of the unit square and two-level hierarchies.

mod geometry;

pub use geometry::{
    directional_patch_region, elements_intersecting, overlap_count, point_in_polygon, Rect,
};

use std::sync::Arc;

use crate::error::{Error, Result};

pub type Point = [f64; 2];

/// Coincidence tolerance for geometric comparisons on the structured grids.
pub const GEOM_TOL: f64 = 1e-12;

/// Conforming triangulation of (0,1)² obtained by splitting an `n`×`n` grid
/// of squares along the lower-left to upper-right diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct TriMesh {
    pub nodes: Vec<Point>,
    pub triangles: Vec<[usize; 3]>,
    pub boundary_node: Vec<bool>,
    pub n: usize,
}

impl TriMesh {
    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn num_triangles(&self) -> usize {
        self.triangles.len()
    }

    /// Longest edge, i.e. the square diagonal √2/n.
    pub fn mesh_size(&self) -> f64 {
        std::f64::consts::SQRT_2 / self.n as f64
    }

    pub fn node_index(&self, i: usize, j: usize) -> usize {
        j * (self.n + 1) + i
    }

    pub fn vertices(&self, t: usize) -> [Point; 3] {
        let [a, b, c] = self.triangles[t];
        [self.nodes[a], self.nodes[b], self.nodes[c]]
    }

    /// Signed area (positive for counterclockwise vertex order).
    pub fn signed_area(&self, t: usize) -> f64 {
        let [p, q, r] = self.vertices(t);
        0.5 * ((q[0] - p[0]) * (r[1] - p[1]) - (r[0] - p[0]) * (q[1] - p[1]))
    }

    pub fn area(&self, t: usize) -> f64 {
        self.signed_area(t).abs()
    }

    pub fn barycenter(&self, t: usize) -> Point {
        let [p, q, r] = self.vertices(t);
        [(p[0] + q[0] + r[0]) / 3.0, (p[1] + q[1] + r[1]) / 3.0]
    }

    /// Gradients of the three barycentric coordinates (constant on `t`).
    pub fn basis_gradients(&self, t: usize) -> [[f64; 2]; 3] {
        let [p, q, r] = self.vertices(t);
        let twice_area = 2.0 * self.signed_area(t);
        [
            [(q[1] - r[1]) / twice_area, (r[0] - q[0]) / twice_area],
            [(r[1] - p[1]) / twice_area, (p[0] - r[0]) / twice_area],
            [(p[1] - q[1]) / twice_area, (q[0] - p[0]) / twice_area],
        ]
    }

    pub fn interior_nodes(&self) -> Vec<usize> {
        (0..self.num_nodes())
            .filter(|&i| !self.boundary_node[i])
            .collect()
    }

    /// Number of triangles incident to each node.
    pub fn node_valence(&self) -> Vec<u8> {
        let mut valence = vec![0u8; self.num_nodes()];
        for tri in &self.triangles {
            for &v in tri {
                valence[v] += 1;
            }
        }
        valence
    }

    /// Triangle of the grid that contains `p` (closed; lowest index on ties
    /// is not guaranteed, only containment).
    pub fn locate(&self, p: Point) -> usize {
        let n = self.n as f64;
        let i = ((p[0] * n).floor() as usize).min(self.n - 1);
        let j = ((p[1] * n).floor() as usize).min(self.n - 1);
        let lx = p[0] * n - i as f64;
        let ly = p[1] * n - j as f64;
        let square = j * self.n + i;
        if ly <= lx {
            2 * square
        } else {
            2 * square + 1
        }
    }
}

pub fn build_uniform_tri_mesh(n: usize) -> Result<TriMesh> {
    if n == 0 {
        return Err(Error::InvalidMesh(
            "subdivisions per side must be at least 1".into(),
        ));
    }
    let mut nodes = Vec::with_capacity((n + 1) * (n + 1));
    let mut boundary_node = Vec::with_capacity((n + 1) * (n + 1));
    for j in 0..=n {
        for i in 0..=n {
            nodes.push([i as f64 / n as f64, j as f64 / n as f64]);
            boundary_node.push(i == 0 || j == 0 || i == n || j == n);
        }
    }
    let idx = |i: usize, j: usize| j * (n + 1) + i;
    let mut triangles = Vec::with_capacity(2 * n * n);
    for j in 0..n {
        for i in 0..n {
            let a = idx(i, j);
            let b = idx(i + 1, j);
            let c = idx(i + 1, j + 1);
            let d = idx(i, j + 1);
            triangles.push([a, b, c]);
            triangles.push([a, c, d]);
        }
    }
    Ok(TriMesh {
        nodes,
        triangles,
        boundary_node,
        n,
    })
}

/// A coarse mesh together with a nested uniform refinement.
#[derive(Debug, Clone)]
pub struct MeshHierarchy {
    pub coarse: Arc<TriMesh>,
    pub fine: Arc<TriMesh>,
    pub coarse_to_fine_node: Vec<usize>,
    pub fine_elem_parent: Vec<usize>,
    pub coarse_elem_children: Vec<Vec<usize>>,
}

impl MeshHierarchy {
    pub fn ratio(&self) -> usize {
        self.fine.n / self.coarse.n
    }

    /// Coarse mesh-size H.
    pub fn coarse_size(&self) -> f64 {
        self.coarse.mesh_size()
    }

    /// Fine mesh-size h.
    pub fn fine_size(&self) -> f64 {
        self.fine.mesh_size()
    }

    /// Interior coarse nodes in ascending index order; these index the
    /// coarse unknowns of every coarse-scale method.
    pub fn coarse_interior(&self) -> Vec<usize> {
        self.coarse.interior_nodes()
    }

    /// Map from fine node to the coarse node it coincides with, if any.
    pub fn fine_to_coarse_node(&self) -> Vec<Option<usize>> {
        let mut map = vec![None; self.fine.num_nodes()];
        for (c, &f) in self.coarse_to_fine_node.iter().enumerate() {
            map[f] = Some(c);
        }
        map
    }
}

pub fn build_hierarchy(coarse_n: usize, fine_n: usize) -> Result<MeshHierarchy> {
    if coarse_n == 0 || fine_n == 0 || !fine_n.is_multiple_of(coarse_n) {
        return Err(Error::NonNestedMeshes { coarse_n, fine_n });
    }
    let coarse = build_uniform_tri_mesh(coarse_n)?;
    let fine = build_uniform_tri_mesh(fine_n)?;
    let r = fine_n / coarse_n;

    let coarse_to_fine_node = (0..=coarse_n)
        .flat_map(|j| (0..=coarse_n).map(move |i| (i, j)))
        .map(|(i, j)| fine.node_index(r * i, r * j))
        .collect();

    let mut fine_elem_parent = Vec::with_capacity(fine.num_triangles());
    let mut coarse_elem_children = vec![Vec::with_capacity(r * r * 2); coarse.num_triangles()];
    for sq in 0..fine_n * fine_n {
        let (fi, fj) = (sq % fine_n, sq / fine_n);
        let (ci, cj) = (fi / r, fj / r);
        let (li, lj) = (fi % r, fj % r);
        for kind in 0..2 {
            // lower triangles of the coarse square satisfy y' <= x' locally
            let parent_kind = match li.cmp(&lj) {
                std::cmp::Ordering::Greater => 0,
                std::cmp::Ordering::Less => 1,
                std::cmp::Ordering::Equal => kind,
            };
            let parent = 2 * (cj * coarse_n + ci) + parent_kind;
            let child = 2 * sq + kind;
            fine_elem_parent.push(parent);
            coarse_elem_children[parent].push(child);
        }
    }

    Ok(MeshHierarchy {
        coarse: Arc::new(coarse),
        fine: Arc::new(fine),
        coarse_to_fine_node,
        fine_elem_parent,
        coarse_elem_children,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn check_invariants(m: &TriMesh) {
        let n = m.n;
        assert_eq!(m.num_nodes(), (n + 1) * (n + 1));
        assert_eq!(m.num_triangles(), 2 * n * n);
        let total: f64 = (0..m.num_triangles()).map(|t| m.signed_area(t)).sum();
        assert_abs_diff_eq!(total, 1.0, epsilon = 1e-13);
        for t in 0..m.num_triangles() {
            assert!(m.signed_area(t) > 0.0);
        }
        for (p, &b) in m.nodes.iter().zip(&m.boundary_node) {
            let on = p.iter().any(|&c| c == 0.0 || c == 1.0);
            assert_eq!(on, b);
        }
        let longest = m
            .triangles
            .iter()
            .flat_map(|tri| {
                (0..3).map(move |k| {
                    let (p, q) = (m.nodes[tri[k]], m.nodes[tri[(k + 1) % 3]]);
                    ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt()
                })
            })
            .fold(0.0, f64::max);
        assert_abs_diff_eq!(longest, m.mesh_size(), epsilon = 1e-14);
    }

    #[test]
    fn single_square() {
        let m = build_uniform_tri_mesh(1).unwrap();
        assert_eq!(m.num_nodes(), 4);
        assert_eq!(m.num_triangles(), 2);
        check_invariants(&m);
    }

    #[test]
    fn two_by_two_has_one_interior_node() {
        let m = build_uniform_tri_mesh(2).unwrap();
        assert_eq!(m.num_nodes(), 9);
        assert_eq!(m.num_triangles(), 8);
        assert_eq!(m.boundary_node.iter().filter(|&&b| b).count(), 8);
        assert_eq!(m.interior_nodes(), vec![4]);
        check_invariants(&m);
    }

    #[test]
    fn mesh_size_matches_h_labels() {
        let m = build_uniform_tri_mesh(16).unwrap();
        assert_abs_diff_eq!(m.mesh_size(), 0.088388, epsilon = 5e-7);
        check_invariants(&m);
        for n in [3, 7, 32] {
            check_invariants(&build_uniform_tri_mesh(n).unwrap());
        }
    }

    #[test]
    fn zero_subdivisions_rejected() {
        assert!(matches!(
            build_uniform_tri_mesh(0),
            Err(Error::InvalidMesh(_))
        ));
    }

    #[test]
    fn construction_is_deterministic() {
        assert_eq!(
            build_uniform_tri_mesh(9).unwrap(),
            build_uniform_tri_mesh(9).unwrap()
        );
    }

    #[test]
    fn locate_finds_containing_triangle() {
        let m = build_uniform_tri_mesh(5).unwrap();
        for t in 0..m.num_triangles() {
            assert_eq!(m.locate(m.barycenter(t)), t);
        }
    }

    fn inside(m: &TriMesh, t: usize, p: Point) -> bool {
        let [a, b, c] = m.vertices(t);
        let cross = |u: Point, v: Point, w: Point| {
            (v[0] - u[0]) * (w[1] - u[1]) - (w[0] - u[0]) * (v[1] - u[1])
        };
        cross(a, b, p) >= -GEOM_TOL && cross(b, c, p) >= -GEOM_TOL && cross(c, a, p) >= -GEOM_TOL
    }

    fn check_hierarchy(h: &MeshHierarchy) {
        for (c, &f) in h.coarse_to_fine_node.iter().enumerate() {
            let (p, q) = (h.coarse.nodes[c], h.fine.nodes[f]);
            assert!((p[0] - q[0]).abs() < GEOM_TOL && (p[1] - q[1]).abs() < GEOM_TOL);
        }
        for (child, &parent) in h.fine_elem_parent.iter().enumerate() {
            for v in h.fine.vertices(child) {
                assert!(inside(&h.coarse, parent, v));
            }
            assert_eq!(h.coarse.locate(h.fine.barycenter(child)), parent);
        }
        let mut seen = vec![false; h.fine.num_triangles()];
        for children in &h.coarse_elem_children {
            for &c in children {
                assert!(!seen[c]);
                seen[c] = true;
            }
        }
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn one_level_refinement() {
        let h = build_hierarchy(1, 2).unwrap();
        assert_eq!(h.coarse_to_fine_node, vec![0, 2, 6, 8]);
        assert!(h.coarse_elem_children.iter().all(|c| c.len() == 4));
        check_hierarchy(&h);
    }

    #[test]
    fn identity_hierarchy_is_bijective() {
        let h = build_hierarchy(8, 8).unwrap();
        let mut m = h.coarse_to_fine_node.clone();
        m.sort_unstable();
        assert_eq!(m, (0..81).collect::<Vec<_>>());
        check_hierarchy(&h);
    }

    #[test]
    fn deeper_hierarchies() {
        check_hierarchy(&build_hierarchy(4, 12).unwrap());
        let h = build_hierarchy(16, 256).unwrap();
        assert_abs_diff_eq!(h.coarse_size(), std::f64::consts::SQRT_2 / 16.0);
        assert_abs_diff_eq!(h.fine_size(), std::f64::consts::SQRT_2 / 256.0);
        assert!(h.coarse_elem_children.iter().all(|c| c.len() == 256));
    }

    #[test]
    fn non_nested_rejected_with_both_values() {
        let err = build_hierarchy(3, 8).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains('3') && msg.contains('8'), "{msg}");
    }
}
