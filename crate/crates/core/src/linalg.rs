//! Bordered block-bidiagonal linear solver.
//!
//! The Newton systems on orbit segments have the shape
//!
//! ```text
//! [ D_0  S_0                      | E_0 ]
//! [      D_1  S_1                 | E_1 ]
//! [           ...  ...            | ... ]
//! [           D_{m-2}  S_{m-2}    | E_. ]
//! [ ----------- border rows ----------- ]
//! ```
//!
//! with `m` unknown blocks of size `k`, optional scalar unknowns appended
//! on the right (a parameter column for continuation), and `k + extras`
//! dense border rows (boundary conditions, arclength constraints). The
//! solver eliminates block columns left to right with row pivoting
//! restricted to the active rows, retiring one pivot row per column, and
//! finishes with a dense solve on the trailing block. Cost is O(k³·m)
//! plus the border updates.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Assembled bordered system. `diag[n]`, `sup[n]` and `extra_cols[n]` are
/// the coefficients of interior row-block `n` on unknown blocks `n`,
/// `n + 1` and the scalar unknowns.
#[derive(Debug, Clone)]
pub struct BorderedSystem {
    pub block_size: usize,
    pub blocks: usize,
    pub extras: usize,
    pub diag: Vec<DMatrix<f64>>,
    pub sup: Vec<DMatrix<f64>>,
    pub extra_cols: Vec<DMatrix<f64>>,
    pub border: DMatrix<f64>,
}

struct Row {
    coeffs: DVector<f64>,
    rhs: f64,
    /// Exclusive end of the contiguous nonzero range; nonzeros live in
    /// `[.., compact_end) ∪ [extras_start, n)`.
    compact_end: usize,
}

impl BorderedSystem {
    pub fn unknowns(&self) -> usize {
        self.block_size * self.blocks + self.extras
    }

    fn border_rows(&self) -> usize {
        self.block_size + self.extras
    }

    /// Solves for the unknown vector. `rhs_interior` stacks the interior
    /// row blocks, `rhs_border` the border rows.
    pub fn solve(&self, rhs_interior: &DVector<f64>, rhs_border: &DVector<f64>) -> Result<DVector<f64>> {
        let (k, m, ne) = (self.block_size, self.blocks, self.extras);
        let n = self.unknowns();
        let extras_start = k * m;
        assert_eq!(rhs_interior.len(), k * (m - 1));
        assert_eq!(rhs_border.len(), self.border_rows());
        assert_eq!(self.border.ncols(), n);

        let mut scale = self.border.amax();
        let mut rows: Vec<Row> = Vec::with_capacity(n);
        for b in 0..m - 1 {
            scale = scale.max(self.diag[b].amax()).max(self.sup[b].amax());
            for r in 0..k {
                let mut coeffs = DVector::zeros(n);
                for c in 0..k {
                    coeffs[b * k + c] = self.diag[b][(r, c)];
                    coeffs[(b + 1) * k + c] = self.sup[b][(r, c)];
                }
                for c in 0..ne {
                    coeffs[extras_start + c] = self.extra_cols[b][(r, c)];
                }
                rows.push(Row {
                    coeffs,
                    rhs: rhs_interior[b * k + r],
                    compact_end: ((b + 2) * k).min(extras_start),
                });
            }
        }
        for r in 0..self.border_rows() {
            rows.push(Row {
                coeffs: self.border.row(r).transpose(),
                rhs: rhs_border[r],
                compact_end: extras_start,
            });
        }
        if scale == 0.0 {
            return Err(Error::SingularJacobian("zero matrix".into()));
        }
        let pivot_tol = 1e-14 * scale;

        let border_base = k * (m - 1);
        // Active row indices; border rows carry entries in every block.
        let mut active: Vec<usize> = (border_base..n).collect();
        let mut retired: Vec<(usize, usize)> = Vec::with_capacity(n);

        let mut eliminate = |active: &mut Vec<usize>, rows: &mut Vec<Row>, col: usize| -> Result<()> {
            let (pos, _) = active
                .iter()
                .enumerate()
                .map(|(i, &r)| (i, rows[r].coeffs[col].abs()))
                .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
                .unwrap();
            let pivot_row = active.swap_remove(pos);
            let piv = rows[pivot_row].coeffs[col];
            if piv.abs() <= pivot_tol {
                return Err(Error::SingularJacobian(format!(
                    "pivot {piv:.3e} at column {col}"
                )));
            }
            for &r in active.iter() {
                let factor = rows[r].coeffs[col] / piv;
                if factor == 0.0 {
                    continue;
                }
                let (pc, pe, prhs) = {
                    let p = &rows[pivot_row];
                    (p.coeffs.clone_owned(), p.compact_end, p.rhs)
                };
                let row = &mut rows[r];
                for c in col..pe {
                    row.coeffs[c] -= factor * pc[c];
                }
                for c in extras_start..n {
                    row.coeffs[c] -= factor * pc[c];
                }
                row.rhs -= factor * prhs;
                row.compact_end = row.compact_end.max(pe);
            }
            retired.push((pivot_row, col));
            Ok(())
        };

        for b in 0..m {
            if b < m - 1 {
                active.extend(b * k..(b + 1) * k);
            }
            for col in b * k..(b + 1) * k {
                eliminate(&mut active, &mut rows, col)?;
            }
        }
        for col in extras_start..n {
            eliminate(&mut active, &mut rows, col)?;
        }
        debug_assert!(active.is_empty());

        let mut x = DVector::zeros(n);
        for &(row_idx, col) in retired.iter().rev() {
            let row = &rows[row_idx];
            let mut s = row.rhs;
            let tail = |from: usize, to: usize, s: &mut f64| {
                for c in from..to {
                    *s -= row.coeffs[c] * x[c];
                }
            };
            if col + 1 >= extras_start {
                tail(col + 1, n, &mut s);
            } else {
                tail(col + 1, row.compact_end, &mut s);
                tail(extras_start, n, &mut s);
            }
            x[col] = s / row.coeffs[col];
        }
        Ok(x)
    }

    /// Dense assembly, for oracle tests and augmented systems.
    pub fn to_dense(&self) -> DMatrix<f64> {
        let (k, m, ne) = (self.block_size, self.blocks, self.extras);
        let n = self.unknowns();
        let mut a = DMatrix::zeros(n, n);
        for b in 0..m - 1 {
            a.view_mut((b * k, b * k), (k, k)).copy_from(&self.diag[b]);
            a.view_mut((b * k, (b + 1) * k), (k, k)).copy_from(&self.sup[b]);
            if ne > 0 {
                a.view_mut((b * k, m * k), (k, ne)).copy_from(&self.extra_cols[b]);
            }
        }
        a.view_mut((k * (m - 1), 0), (self.border_rows(), n)).copy_from(&self.border);
        a
    }
}

/// Dense LU solve with the crate error type.
pub fn solve_dense(a: DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    a.lu()
        .solve(b)
        .filter(|x| x.iter().all(|v| v.is_finite()))
        .ok_or_else(|| Error::SingularJacobian("dense LU".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_system(rng: &mut ChaCha8Rng, k: usize, m: usize, ne: usize) -> BorderedSystem {
        let mut mat = |r: usize, c: usize| {
            DMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0f64))
        };
        let diag = (0..m - 1).map(|_| mat(k, k)).collect();
        let sup = (0..m - 1).map(|_| mat(k, k)).collect();
        let extra_cols = (0..m - 1).map(|_| mat(k, ne)).collect();
        let border = mat(k + ne, m * k + ne);
        BorderedSystem { block_size: k, blocks: m, extras: ne, diag, sup, extra_cols, border }
    }

    #[test]
    fn matches_dense_lu_on_random_systems() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for &(k, m, ne) in &[(1usize, 4usize, 0usize), (2, 3, 0), (2, 8, 1), (3, 5, 2), (2, 20, 1)] {
            for _ in 0..5 {
                let sys = random_system(&mut rng, k, m, ne);
                let n = sys.unknowns();
                let rhs = DVector::from_fn(n, |i, _| (i as f64 * 0.37).sin());
                let ri = rhs.rows(0, k * (m - 1)).clone_owned();
                let rb = rhs.rows(k * (m - 1), k + ne).clone_owned();
                let x = sys.solve(&ri, &rb).unwrap();
                let dense = sys.to_dense();
                let x_ref = dense.lu().solve(&rhs).unwrap();
                assert!(
                    (&x - &x_ref).amax() <= 1e-9 * (1.0 + x_ref.amax()),
                    "k={k} m={m} ne={ne}: {} vs dense",
                    (&x - &x_ref).amax()
                );
            }
        }
    }

    #[test]
    fn bidiagonal_structure_with_identity_superdiagonal() {
        // The Newton system shape: D_n = -A_n, S_n = I.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let k = 2;
        let m = 12;
        let diag: Vec<_> =
            (0..m - 1).map(|_| DMatrix::from_fn(k, k, |_, _| rng.random_range(-2.0..2.0f64))).collect();
        let sup: Vec<_> = (0..m - 1).map(|_| DMatrix::identity(k, k)).collect();
        let extra_cols: Vec<_> = (0..m - 1).map(|_| DMatrix::zeros(k, 0)).collect();
        let mut border = DMatrix::zeros(k, m * k);
        border.view_mut((0, 0), (k, k)).copy_from(&DMatrix::identity(k, k));
        border.view_mut((0, (m - 1) * k), (k, k)).copy_from(&(DMatrix::identity(k, k) * -1.0));
        let sys = BorderedSystem { block_size: k, blocks: m, extras: 0, diag, sup, extra_cols, border };
        let n = sys.unknowns();
        let rhs = DVector::from_fn(n, |i, _| ((i * i) as f64 * 0.11).cos());
        let x = sys.solve(
            &rhs.rows(0, k * (m - 1)).clone_owned(),
            &rhs.rows(k * (m - 1), k).clone_owned(),
        )
        .unwrap();
        let residual = sys.to_dense() * &x - rhs;
        assert!(residual.amax() <= 1e-10);
    }

    #[test]
    fn reports_singularity() {
        let k = 2;
        let m = 3;
        let diag = vec![DMatrix::zeros(k, k); m - 1];
        let sup = vec![DMatrix::zeros(k, k); m - 1];
        let extra_cols = vec![DMatrix::zeros(k, 0); m - 1];
        let border = DMatrix::from_element(k, m * k, 1.0);
        let sys = BorderedSystem { block_size: k, blocks: m, extras: 0, diag, sup, extra_cols, border };
        let err = sys.solve(&DVector::zeros(k * (m - 1)), &DVector::zeros(k));
        assert!(matches!(err, Err(Error::SingularJacobian(_))));
    }
}
