//! Direct sparse LU solves (backed by faer) on index-restricted systems.

use faer::linalg::solvers::Solve;
use faer::sparse::linalg::solvers::Lu;
use faer::sparse::linalg::LuError;
use faer::sparse::{SparseColMat, Triplet};
use faer::Mat;

use super::sparse::CsrMatrix;
use crate::error::{Error, Result};

/// LU factorization of `A[dofs, dofs]` for a global matrix `A`.
pub struct RestrictedLu {
    lu: Lu<usize, f64>,
    dofs: Vec<usize>,
}

impl RestrictedLu {
    /// Factors the restriction of `matrix` to `dofs` (rows and columns in
    /// list order). `context` labels errors.
    pub fn factor(matrix: &CsrMatrix, dofs: &[usize], context: &str) -> Result<Self> {
        let mut local = vec![usize::MAX; matrix.ncols()];
        for (k, &d) in dofs.iter().enumerate() {
            local[d] = k;
        }
        let mut triplets = Vec::with_capacity(dofs.len() * 7);
        for (i, &r) in dofs.iter().enumerate() {
            let (cols, vals) = matrix.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                if local[c] != usize::MAX {
                    triplets.push(Triplet::new(i, local[c], v));
                }
            }
        }
        let n = dofs.len();
        let singular = |index: usize| Error::Singular {
            context: context.to_string(),
            index,
            node: dofs.get(index).copied().unwrap_or(usize::MAX),
        };
        let mat = SparseColMat::<usize, f64>::try_new_from_triplets(n, n, &triplets)
            .map_err(|_| singular(0))?;
        let lu = mat.sp_lu().map_err(|e| match e {
            LuError::SymbolicSingular { index } => singular(index),
            LuError::Generic(_) => singular(0),
        })?;
        Ok(Self {
            lu,
            dofs: dofs.to_vec(),
        })
    }

    pub fn dofs(&self) -> &[usize] {
        &self.dofs
    }

    pub fn len(&self) -> usize {
        self.dofs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dofs.is_empty()
    }

    /// Solves `A_rr x = b` (or the transposed system) for each right-hand
    /// side, all given in local numbering.
    pub fn solve_many(&self, rhs: &[Vec<f64>], transpose: bool, context: &str) -> Result<Vec<Vec<f64>>> {
        let n = self.len();
        if rhs.is_empty() {
            return Ok(Vec::new());
        }
        let mut b = Mat::<f64>::from_fn(n, rhs.len(), |i, j| rhs[j][i]);
        if transpose {
            self.lu.solve_transpose_in_place(b.as_mut());
        } else {
            self.lu.solve_in_place(b.as_mut());
        }
        let mut out = Vec::with_capacity(rhs.len());
        for j in 0..rhs.len() {
            let col: Vec<f64> = (0..n).map(|i| b[(i, j)]).collect();
            if let Some(i) = col.iter().position(|v| !v.is_finite()) {
                return Err(Error::Singular {
                    context: context.to_string(),
                    index: i,
                    node: self.dofs[i],
                });
            }
            out.push(col);
        }
        Ok(out)
    }

    pub fn solve(&self, rhs: &[f64], transpose: bool, context: &str) -> Result<Vec<f64>> {
        Ok(self
            .solve_many(std::slice::from_ref(&rhs.to_vec()), transpose, context)?
            .pop()
            .unwrap_or_default())
    }
}

/// Relative residual `‖A_rr x − b‖ / ‖b‖` (or for `A_rrᵀ`), with `‖b‖ = 0`
/// mapped to the absolute residual.
pub fn restricted_residual(matrix: &CsrMatrix, dofs: &[usize], x: &[f64], b: &[f64], transpose: bool) -> f64 {
    let mut full = vec![0.0; matrix.ncols()];
    for (&d, &v) in dofs.iter().zip(x) {
        full[d] = v;
    }
    let ax = if transpose {
        matrix.transpose_mul_vec(&full)
    } else {
        matrix.mul_vec(&full)
    };
    let mut num = 0.0;
    let mut den = 0.0;
    for (k, &d) in dofs.iter().enumerate() {
        num += (ax[d] - b[k]).powi(2);
        den += b[k] * b[k];
    }
    if den > 0.0 {
        (num / den).sqrt()
    } else {
        num.sqrt()
    }
}

/// Hager's estimate of the 1-norm condition number of `A_rr` given its
/// factorization.
pub fn condition_estimate_1(matrix: &CsrMatrix, lu: &RestrictedLu) -> f64 {
    let n = lu.len();
    if n == 0 {
        return 1.0;
    }
    let sub = matrix.submatrix(lu.dofs(), lu.dofs());
    let mut col_sums = vec![0.0; n];
    for (_, c, v) in sub.iter() {
        col_sums[c] += v.abs();
    }
    let norm_a = col_sums.into_iter().fold(0.0, f64::max);
    let mut x = vec![1.0 / n as f64; n];
    let mut est = 0.0;
    for _ in 0..5 {
        let y = match lu.solve(&x, false, "condition estimate") {
            Ok(y) => y,
            Err(_) => return f64::INFINITY,
        };
        est = y.iter().map(|v| v.abs()).sum::<f64>();
        let s: Vec<f64> = y.iter().map(|v| if *v >= 0.0 { 1.0 } else { -1.0 }).collect();
        let z = match lu.solve(&s, true, "condition estimate") {
            Ok(z) => z,
            Err(_) => return f64::INFINITY,
        };
        let (j, zmax) = z
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (i, v)| if v.abs() > acc.1 { (i, v.abs()) } else { acc });
        let zx: f64 = z.iter().zip(&x).map(|(a, b)| a * b).sum();
        if zmax <= zx {
            break;
        }
        x = vec![0.0; n];
        x[j] = 1.0;
    }
    norm_a * est
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn restricted_solve_and_transpose() {
        // [[4,1,0],[2,5,1],[0,3,6]]
        let m = CsrMatrix::from_triplets(
            3,
            3,
            &[(0, 0, 4.0), (0, 1, 1.0), (1, 0, 2.0), (1, 1, 5.0), (1, 2, 1.0), (2, 1, 3.0), (2, 2, 6.0)],
        );
        let dofs = [0, 1, 2];
        let lu = RestrictedLu::factor(&m, &dofs, "test").unwrap();
        let b = [1.0, 2.0, 3.0];
        let x = lu.solve(&b, false, "test").unwrap();
        assert!(restricted_residual(&m, &dofs, &x, &b, false) < 1e-14);
        let y = lu.solve(&b, true, "test").unwrap();
        assert!(restricted_residual(&m, &dofs, &y, &b, true) < 1e-14);

        let sub = RestrictedLu::factor(&m, &[2, 0], "test").unwrap();
        let z = sub.solve(&[6.0, 4.0], false, "test").unwrap();
        assert!((z[0] - 1.0).abs() < 1e-15 && (z[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn structurally_singular_is_reported() {
        let m = CsrMatrix::from_triplets(2, 2, &[(0, 0, 1.0), (1, 0, 1.0)]);
        match RestrictedLu::factor(&m, &[0, 1], "tiny").map(|lu| lu.solve(&[1.0, 1.0], false, "tiny")) {
            Err(Error::Singular { .. }) | Ok(Err(Error::Singular { .. })) => {}
            other => panic!("expected singular error, got {:?}", other.map(|r| r.is_ok())),
        }
    }

    #[test]
    fn condition_of_diagonal() {
        let m = CsrMatrix::from_triplets(2, 2, &[(0, 0, 1.0), (1, 1, 1e-3)]);
        let lu = RestrictedLu::factor(&m, &[0, 1], "diag").unwrap();
        let c = condition_estimate_1(&m, &lu);
        assert!((c - 1e3).abs() < 1e-9, "{c}");
    }
}
