//! Directional patch regions and convex polygon queries.

use super::{Point, TriMesh, GEOM_TOL};

/// Parallelogram around a coarse element, stretched upstream against the
/// velocity, together with its clipping against the unit square.
#[derive(Debug, Clone, PartialEq)]
pub struct Rect {
    /// Counterclockwise corners before clipping.
    pub corners: [Point; 4],
    /// Counterclockwise convex polygon `corners ∩ [0,1]²`.
    pub clipped: Vec<Point>,
}

impl Rect {
    pub fn from_corners(corners: [Point; 4]) -> Self {
        let clipped = clip_to_unit_square(&corners);
        Self { corners, clipped }
    }

    pub fn unit_square() -> Self {
        Self::from_corners([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
    }

    /// Degenerate region consisting of a single point of the domain.
    pub fn point(p: Point) -> Self {
        Self {
            corners: [p; 4],
            clipped: vec![p],
        }
    }

    /// Axis-aligned bounding box of the clipped polygon as `[xmin, xmax, ymin, ymax]`.
    pub fn bounding_box(&self) -> [f64; 4] {
        self.clipped.iter().fold(
            [f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY],
            |b, p| [b[0].min(p[0]), b[1].max(p[0]), b[2].min(p[1]), b[3].max(p[1])],
        )
    }

    pub fn contains(&self, p: Point) -> bool {
        point_in_polygon(&self.clipped, p)
    }
}

/// Region `Ω ∩ conv{mid ± ℓHt + ℓHb, mid ± ℓHt − ℓ(H²/ε)b}` with `t` the
/// velocity direction rotated by +90°.
pub fn directional_patch_region(mid: Point, ell: u32, b: [f64; 2], h: f64, epsilon: f64) -> Rect {
    assert!(
        ((b[0] * b[0] + b[1] * b[1]).sqrt() - 1.0).abs() < 1e-12,
        "velocity direction must be a unit vector"
    );
    assert!(ell >= 1, "patch level must be at least 1");
    assert!(epsilon > 0.0 && epsilon <= 1.0, "epsilon must lie in (0,1]");
    let t = [-b[1], b[0]];
    let l = ell as f64;
    let cross = l * h;
    let down = l * h;
    let up = l * h * h / epsilon;
    let at = |s: f64, d: f64| [mid[0] + s * t[0] + d * b[0], mid[1] + s * t[1] + d * b[1]];
    Rect::from_corners([at(-cross, down), at(cross, down), at(cross, -up), at(-cross, -up)])
}

/// Closed point-in-convex-polygon test for counterclockwise polygons.
pub fn point_in_polygon(poly: &[Point], p: Point) -> bool {
    match poly.len() {
        0 => false,
        1 => dist2(poly[0], p) <= GEOM_TOL * GEOM_TOL,
        n => (0..n).all(|k| {
            let (a, b) = (poly[k], poly[(k + 1) % n]);
            if dist2(a, b) == 0.0 {
                return true;
            }
            cross(a, b, p) >= -GEOM_TOL * (1.0 + dist2(a, b).sqrt())
        }),
    }
}

/// Indices of all triangles whose closure meets the closed clipped region,
/// in ascending order.
pub fn elements_intersecting(mesh: &TriMesh, region: &Rect) -> Vec<usize> {
    if region.clipped.is_empty() {
        return Vec::new();
    }
    let [x0, x1, y0, y1] = region.bounding_box();
    (0..mesh.num_triangles())
        .filter(|&t| {
            let tri = mesh.vertices(t);
            let tx0 = tri.iter().map(|p| p[0]).fold(f64::INFINITY, f64::min);
            let tx1 = tri.iter().map(|p| p[0]).fold(f64::NEG_INFINITY, f64::max);
            let ty0 = tri.iter().map(|p| p[1]).fold(f64::INFINITY, f64::min);
            let ty1 = tri.iter().map(|p| p[1]).fold(f64::NEG_INFINITY, f64::max);
            if tx1 < x0 - GEOM_TOL || tx0 > x1 + GEOM_TOL || ty1 < y0 - GEOM_TOL || ty0 > y1 + GEOM_TOL
            {
                return false;
            }
            convex_intersect(&tri, &region.clipped)
        })
        .collect()
}

/// `max_K #{T : K ⊂ Ω_{T,ℓ,b}}` over the elements of `mesh`.
pub fn overlap_count(mesh: &TriMesh, ell: u32, b: [f64; 2], epsilon: f64) -> usize {
    let h = mesh.mesh_size();
    let mut count = vec![0usize; mesh.num_triangles()];
    for t in 0..mesh.num_triangles() {
        let region = directional_patch_region(mesh.barycenter(t), ell, b, h, epsilon);
        for k in elements_intersecting(mesh, &region) {
            count[k] += 1;
        }
    }
    count.into_iter().max().unwrap_or(0)
}

fn dist2(a: Point, b: Point) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)
}

fn cross(a: Point, b: Point, p: Point) -> f64 {
    (b[0] - a[0]) * (p[1] - a[1]) - (p[0] - a[0]) * (b[1] - a[1])
}

/// Separating-axis test for two closed convex polygons (either may be
/// degenerate).
fn convex_intersect(a: &[Point], b: &[Point]) -> bool {
    let separated_along = |poly: &[Point]| {
        let n = poly.len();
        (0..n).any(|k| {
            let (p, q) = (poly[k], poly[(k + 1) % n]);
            let axis = [-(q[1] - p[1]), q[0] - p[0]];
            let len = (axis[0] * axis[0] + axis[1] * axis[1]).sqrt();
            if len == 0.0 {
                return false;
            }
            let axis = [axis[0] / len, axis[1] / len];
            let proj = |s: &[Point]| {
                s.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                    let d = v[0] * axis[0] + v[1] * axis[1];
                    (lo.min(d), hi.max(d))
                })
            };
            let (alo, ahi) = proj(a);
            let (blo, bhi) = proj(b);
            ahi < blo - GEOM_TOL || bhi < alo - GEOM_TOL
        })
    };
    !(separated_along(a) || separated_along(b))
}

/// Sutherland-Hodgman clipping of a convex polygon against `[0,1]²`.
fn clip_to_unit_square(poly: &[Point]) -> Vec<Point> {
    // each half-plane as (axis, bound, keep_below)
    let planes = [(0, 0.0, false), (0, 1.0, true), (1, 0.0, false), (1, 1.0, true)];
    let mut out: Vec<Point> = poly.to_vec();
    for (axis, bound, below) in planes {
        if out.is_empty() {
            break;
        }
        let inside = |p: &Point| {
            if below {
                p[axis] <= bound
            } else {
                p[axis] >= bound
            }
        };
        let input = std::mem::take(&mut out);
        let n = input.len();
        for k in 0..n {
            let cur = input[k];
            let prev = input[(k + n - 1) % n];
            let (ci, pi) = (inside(&cur), inside(&prev));
            if ci != pi {
                let s = (bound - prev[axis]) / (cur[axis] - prev[axis]);
                let mut x = [
                    prev[0] + s * (cur[0] - prev[0]),
                    prev[1] + s * (cur[1] - prev[1]),
                ];
                x[axis] = bound;
                out.push(x);
            }
            if ci {
                out.push(cur);
            }
        }
    }
    out.dedup_by(|a, b| dist2(*a, *b) <= GEOM_TOL * GEOM_TOL);
    if out.len() > 1 && dist2(out[0], out[out.len() - 1]) <= GEOM_TOL * GEOM_TOL {
        out.pop();
    }
    out
}
